"""Exception hierarchy shared by all qsl_lab modules."""


class QSLError(Exception):
    """Base class for every error raised by qsl_lab."""


class ParameterError(QSLError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class DomainError(QSLError, ValueError):
    """A function argument lies outside the mathematical domain."""


class InsufficientDataError(QSLError, ValueError):
    """Too few samples for a finite-difference analysis."""


class NumericalConsistencyError(QSLError, ArithmeticError):
    """A computed quantity violates an invariant beyond round-off."""


class StepSizeError(NumericalConsistencyError):
    """An integrator step is too large for the requested accuracy."""


class ResourceError(QSLError, MemoryError):
    """The requested dense problem is too large."""
