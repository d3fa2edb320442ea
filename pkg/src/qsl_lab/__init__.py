"""Quantum speed-limit ratios for a driven boson mode and a driven XY chain."""

__version__ = "0.1.0"
