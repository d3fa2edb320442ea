"""Driven two-level bosonic mode.

The oscillator ``H = A (a^+ a + 1/2) + V*(t) a^+ + V(t) a`` with
``V(t) = V0 exp(i omega t)`` is truncated to the vacuum and the first
excitation.  The interaction-frame amplitudes obey

    c0' = -i V0 exp(+i d t) c1
    c1' = +i V0 exp(-i d t) c0,        d = omega - A,

whose characteristic equation ``l^2 - i d l - V0^2 = 0`` has discriminant
``4 V0^2 - d^2``.  With ``c0(0) = 1, c0'(0) = 0`` the solution is

    c0(t) = exp(i d t / 2) [cosh(s t) - (i d / 2) t sinhc(s t)]
    c1(t) = i V0 t exp(-i d t / 2) sinhc(s t),     s = sqrt(Delta) / 2,

valid in all three regimes (``s`` is imaginary for Delta < 0 and zero at the
degenerate point).  The flow does not conserve ``|c0|^2 + |c1|^2``, so every
observable uses the renormalized pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    BoundReport,
    ObservableSeries,
    TimeGrid,
    make_report,
    ml_denominator,
    mt_denominator,
    std_from_variance,
)
from .errors import ParameterError, StepSizeError

DEGENERATE_TOL = 1e-12
_SERIES_CUTOFF = 1e-3


@dataclass(frozen=True)
class DriveParams:
    A: float
    omega: float
    V0: float

    def __post_init__(self):
        for name in ("A", "omega", "V0"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if not self.A > 0:
            raise ParameterError(f"A must be > 0, got {self.A!r}")
        if self.V0 < 0:
            raise ParameterError(f"V0 must be >= 0, got {self.V0!r}")

    @property
    def detuning(self) -> float:
        return self.omega - self.A

    @property
    def E0(self) -> float:
        return self.A / 2

    @property
    def E1(self) -> float:
        return 3 * self.A / 2


class Regime(str, Enum):
    OSCILLATORY = "oscillatory"              # Delta < 0
    DEGENERATE = "degenerate"                # Delta = 0
    MIXED_EXPONENTIAL = "mixed-exponential"  # Delta > 0


@dataclass(frozen=True)
class AmplitudePair:
    """Raw and normalized amplitudes; fields are scalars or equal-shape arrays."""

    c0: complex
    c1: complex
    c0_bar: complex
    c1_bar: complex


def discriminant(params: DriveParams) -> float:
    return 4 * params.V0**2 - params.detuning**2


def regime(params: DriveParams) -> tuple[Regime, float]:
    delta = discriminant(params)
    if abs(delta) <= DEGENERATE_TOL:
        return Regime.DEGENERATE, delta
    return (Regime.MIXED_EXPONENTIAL if delta > 0 else Regime.OSCILLATORY), delta


def _half_root(params: DriveParams) -> complex:
    """``s = sqrt(Delta)/2``: real for Delta >= 0, imaginary otherwise."""
    kind, delta = regime(params)
    if kind is Regime.DEGENERATE:
        return 0j
    if delta > 0:
        return complex(math.sqrt(delta) / 2, 0.0)
    return complex(0.0, math.sqrt(-delta) / 2)


def characteristic_roots(params: DriveParams) -> tuple[complex, complex]:
    """Roots ``(l+, l-) = (i d +- sqrt(Delta)) / 2`` of the amplitude equation."""
    mu = 0.5j * params.detuning
    s = _half_root(params)
    return mu + s, mu - s


def _scaled_cosh_sinhc(x):
    """``cosh(x) e^-a`` and ``sinh(x)/x e^-a`` with ``a = |Re x|``, plus ``a``."""
    x = np.asarray(x, dtype=complex)
    a = np.abs(x.real)
    ep = np.exp(x - a)
    em = np.exp(-x - a)
    ch = 0.5 * (ep + em)
    small = np.abs(x) < _SERIES_CUTOFF
    with np.errstate(divide="ignore", invalid="ignore"):
        sc = np.where(small, 0.0, (ep - em) / (2 * np.where(small, 1.0, x)))
    x2 = x * x
    series = (1 + x2 / 6 * (1 + x2 / 20 * (1 + x2 / 42))) * np.exp(-a)
    sc = np.where(small, series, sc)
    return ch, sc, a


def _scaled_amplitudes(params: DriveParams, t):
    """Amplitudes divided by ``exp(a)``; returns ``(c0s, c1s, a)``."""
    t = np.asarray(t, dtype=float)
    d = params.detuning
    ch, sc, a = _scaled_cosh_sinhc(_half_root(params) * t)
    c0s = np.exp(0.5j * d * t) * (ch - 0.5j * d * t * sc)
    c1s = 1j * params.V0 * t * np.exp(-0.5j * d * t) * sc
    return c0s, c1s, a


def _pack(c0s, c1s, a) -> AmplitudePair:
    norm = np.hypot(np.abs(c0s), np.abs(c1s))
    with np.errstate(over="ignore", invalid="ignore"):
        scale = np.exp(a)
        c0, c1 = c0s * scale, c1s * scale
    out = (c0, c1, c0s / norm, c1s / norm)
    if np.ndim(c0s) == 0:
        out = tuple(complex(v) for v in out)
    return AmplitudePair(*out)


def amplitudes(params: DriveParams, t) -> AmplitudePair:
    """Closed-form amplitudes at time(s) ``t >= 0``.

    Raw amplitudes grow like ``exp(sqrt(Delta) t / 2)`` when Delta > 0 and may
    overflow to non-finite values for very long times; the normalized pair never does.
    """
    if np.any(np.asarray(t) < 0):
        raise ParameterError("t must be >= 0")
    return _pack(*_scaled_amplitudes(params, t))


def rhs(params: DriveParams, t: float, c0: complex, c1: complex) -> tuple[complex, complex]:
    """Right-hand side of the amplitude equations."""
    d, v = params.detuning, params.V0
    ph = complex(math.cos(d * t), math.sin(d * t))
    return -1j * v * ph * c1, 1j * v * ph.conjugate() * c0


def max_oracle_dt(params: DriveParams) -> float:
    return 0.01 / max(1.0, abs(params.detuning), params.V0)


def rk4_oracle(params: DriveParams, grid: TimeGrid) -> AmplitudePair:
    """Classical RK4 integration of the amplitude equations on ``grid``.

    The state is rescaled to unit norm after every step (the equations are
    linear) and the accumulated log-scale restores the raw amplitudes.
    Returns an :class:`AmplitudePair` of arrays, one entry per grid node.
    """
    h = grid.dt
    if h > max_oracle_dt(params) * (1 + 1e-12):
        raise StepSizeError(
            f"dt={h:.3g} exceeds 0.01/max(1, |omega-A|, V0) = {max_oracle_dt(params):.3g}")
    n = grid.steps + 1
    c0b = np.empty(n, complex)
    c1b = np.empty(n, complex)
    logs = np.empty(n)
    y0, y1, log_scale = 1 + 0j, 0j, 0.0
    c0b[0], c1b[0], logs[0] = y0, y1, 0.0
    f = rhs
    for i in range(1, n):
        t = (i - 1) * h
        k1 = f(params, t, y0, y1)
        k2 = f(params, t + h / 2, y0 + h / 2 * k1[0], y1 + h / 2 * k1[1])
        k3 = f(params, t + h / 2, y0 + h / 2 * k2[0], y1 + h / 2 * k2[1])
        k4 = f(params, t + h, y0 + h * k3[0], y1 + h * k3[1])
        y0 += h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y1 += h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        nrm = math.hypot(abs(y0), abs(y1))
        y0, y1 = y0 / nrm, y1 / nrm
        log_scale += math.log(nrm)
        c0b[i], c1b[i], logs[i] = y0, y1, log_scale
    with np.errstate(over="ignore"):
        scale = np.exp(logs)
    return AmplitudePair(c0b * scale, c1b * scale, c0b, c1b)


def overlap_0tau(params: DriveParams, tau: float) -> tuple[complex, float]:
    """``<psi(0)|psi(tau)>`` in the Schroedinger picture and its modulus."""
    start = amplitudes(params, 0.0)
    end = amplitudes(params, tau)
    z0 = start.c0_bar.conjugate() * end.c0_bar
    z1 = start.c1_bar.conjugate() * end.c1_bar
    ov = z0 * np.exp(-1j * params.E0 * tau) + z1 * np.exp(-1j * params.E1 * tau)
    return complex(ov), float(abs(ov))


def _state_and_hamiltonian(params: DriveParams, t: np.ndarray):
    amp = amplitudes(params, t)
    psi0 = amp.c0_bar * np.exp(-1j * params.E0 * t)
    psi1 = amp.c1_bar * np.exp(-1j * params.E1 * t)
    v = params.V0 * np.exp(1j * params.omega * t)
    return amp, psi0, psi1, v


def energy_series(params: DriveParams, grid: TimeGrid) -> ObservableSeries:
    """Instantaneous energy ``A(|c1|^2 + 1/2) + 2 Re[V* c1* c0 e^{iAt}]``."""
    t = grid.nodes()
    amp = amplitudes(params, t)
    coupling = params.V0 * np.exp(-1j * params.omega * t) * np.conj(amp.c1_bar) \
        * amp.c0_bar * np.exp(1j * params.A * t)
    e = params.A * (np.abs(amp.c1_bar) ** 2 + 0.5) + 2 * coupling.real
    return ObservableSeries(grid, e)


def variance_values(params: DriveParams, t) -> np.ndarray:
    """Energy variance of the normalized two-level state at times ``t``."""
    t = np.asarray(t, dtype=float)
    _, p0, p1, v = _state_and_hamiltonian(params, t)
    h0 = params.E0 * p0 + v * p1
    h1 = np.conj(v) * p0 + params.E1 * p1
    mean = (np.conj(p0) * h0 + np.conj(p1) * h1).real
    return np.abs(h0 - mean * p0) ** 2 + np.abs(h1 - mean * p1) ** 2


def std_series(params: DriveParams, grid: TimeGrid) -> ObservableSeries:
    return ObservableSeries(grid, std_from_variance(variance_values(params, grid.nodes())))


def ml_energy(params: DriveParams, grid: TimeGrid):
    """Time-averaged energy above ``E(0) = A/2``; ``None`` if not positive."""
    return ml_denominator(energy_series(params, grid), params.E0)


def mt_energy(params: DriveParams, grid: TimeGrid) -> float:
    return mt_denominator(std_series(params, grid))


def boson_report(params: DriveParams, tau: float, grid: TimeGrid | None = None,
                 bound: str = "both") -> BoundReport:
    grid = grid or TimeGrid.for_tau(tau)
    if abs(grid.t_end - tau) > 1e-12 * max(1.0, tau):
        raise ParameterError("grid must end at tau")
    _, omega = overlap_0tau(params, tau)
    return make_report(tau, omega, mt_energy(params, grid), ml_energy(params, grid), bound)
