"""Model-independent evaluation of time-energy speed-limit bounds.

Both bounds share the form ``R(tau) = hbar * C / dE`` where ``C`` is the
Bures angle ``arccos|<psi(0)|psi(tau)>|``.  The Mandelstam-Tamm energy scale
is the time-averaged standard deviation of ``H(t)``; the Margolus-Levitin
scale is the time-averaged mean energy above the initial energy.  Time
averages use the composite trapezoid rule on uniform grids.

Invalid quantities (a non-positive ML energy, hence an undefined ratio) are
represented by ``None``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DomainError,
    InsufficientDataError,
    NumericalConsistencyError,
    ParameterError,
    QSLError,
)

HBAR = 1.0

ROUND_OFF = 1e-12
INEQUALITY_SLACK = 1e-9
DEFAULT_MAX_DT = 0.01
DEFAULT_MIN_STEPS = 1000


class InequalityViolation(NumericalConsistencyError):
    """A report with ``R > tau`` beyond the slack of 1e-9."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[0, t_end]`` with ``steps`` intervals."""

    t_end: float
    steps: int

    def __post_init__(self):
        if not (math.isfinite(self.t_end) and self.t_end > 0):
            raise ParameterError(f"t_end must be finite and > 0, got {self.t_end!r}")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ParameterError(f"steps must be an integer >= 2, got {self.steps!r}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.steps + 1)

    @classmethod
    def for_tau(cls, tau: float, max_dt: float = DEFAULT_MAX_DT,
                min_steps: int = DEFAULT_MIN_STEPS) -> "TimeGrid":
        """Grid with ``dt <= min(max_dt, tau / min_steps)``."""
        if not tau > 0:
            raise ParameterError(f"tau must be > 0, got {tau!r}")
        steps = max(int(math.ceil(tau / max_dt - 1e-9)), min_steps)
        return cls(float(tau), steps)


@dataclass(frozen=True)
class ObservableSeries:
    """Real samples of an observable at every node of ``grid``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.steps + 1,):
            raise ParameterError(
                f"series needs {self.grid.steps + 1} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericalConsistencyError("observable series contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class BoundReport:
    """One row of bound data at a single final time ``tau``."""

    tau: float
    omega_abs: float
    bures_angle: float
    dE_mt: float
    dE_ml: Optional[float]
    R_mt: Optional[float]
    R_ml: Optional[float]

    def __post_init__(self):
        if abs(self.bures_angle - math.acos(min(1.0, max(0.0, self.omega_abs)))) > 1e-12:
            raise NumericalConsistencyError("bures_angle inconsistent with omega_abs")
        for name in ("R_mt", "R_ml"):
            r = getattr(self, name)
            if r is not None and not self.tau >= r - INEQUALITY_SLACK:
                raise InequalityViolation(
                    f"{name}={r!r} exceeds tau={self.tau!r}: time-energy bound violated")

    def as_row(self) -> tuple:
        return (self.tau, self.omega_abs, self.bures_angle, self.dE_mt, self.dE_ml,
                self.R_mt, self.R_ml)


@dataclass(frozen=True)
class Extremum:
    tau_star: float
    kind: str  # "maximum" | "minimum" | "inflexion"
    R_value: float
    C_value: float


@dataclass(frozen=True)
class StationarityPoint:
    """Logarithmic derivatives of C and dE at an interpolated extremum of R.

    ``truncation`` is an a-posteriori error estimate obtained by repeating
    the evaluation on the grid coarsened by two.
    """

    tau_star: float
    ratio_lhs: float
    ratio_rhs: float
    truncation: float

    @property
    def mismatch(self) -> float:
        return abs(self.ratio_lhs - self.ratio_rhs)


def bures_angle(omega_abs):
    """``arccos`` of an overlap modulus, tolerant to round-off just outside [0, 1]."""
    w = np.asarray(omega_abs, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w < -ROUND_OFF) or np.any(w > 1 + ROUND_OFF):
        raise DomainError(f"overlap modulus outside [0, 1]: {omega_abs!r}")
    out = np.arccos(np.clip(w, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def integrate_time_average(series: ObservableSeries) -> float:
    """``(1/tau) * integral_0^tau`` by the composite trapezoid rule."""
    g = series.grid
    return float(np.trapezoid(series.values, dx=g.dt) / g.t_end)


def std_from_variance(variance) -> np.ndarray:
    """Square root of variances, clamping round-off negatives down to -1e-12."""
    var = np.asarray(variance, dtype=float)
    if np.any(var < -ROUND_OFF):
        raise NumericalConsistencyError(
            f"negative energy variance {float(var.min()):.3e} beyond round-off")
    return np.sqrt(np.maximum(var, 0.0))


def mt_denominator(std_series: ObservableSeries) -> float:
    """Mandelstam-Tamm energy scale: time average of the energy spread."""
    if np.any(std_series.values < 0):
        raise NumericalConsistencyError("energy standard deviation must be non-negative")
    return integrate_time_average(std_series)


def ml_denominator(energy_series: ObservableSeries, e0: float) -> Optional[float]:
    """Margolus-Levitin energy scale ``<E> - E(0)``; ``None`` when <= 1e-12."""
    de = integrate_time_average(energy_series) - e0
    return de if de > ROUND_OFF else None


def signed_ml_denominator(energy_series: ObservableSeries, e0: float) -> float:
    """Same as :func:`ml_denominator` but without the validity flag."""
    return integrate_time_average(energy_series) - e0


def qsl_ratio(bures: float, dE: Optional[float]) -> Optional[float]:
    """``hbar * C / dE``; exactly 0 when ``C == 0`` whatever ``dE`` is."""
    if not 0.0 <= bures <= math.pi / 2 + ROUND_OFF:
        raise DomainError(f"Bures angle outside [0, pi/2]: {bures!r}")
    if bures == 0.0:
        return 0.0
    if dE is None or not dE > 0:
        return None
    return HBAR * bures / dE


def make_report(tau: float, omega_abs: float, dE_mt: float,
                dE_ml: Optional[float], bound: str = "both") -> BoundReport:
    """Assemble a :class:`BoundReport` from an overlap and two energy scales.

    ``bound`` ("both", "mt" or "ml") leaves the other ratio unset, so it is
    neither reported nor checked against ``tau``.
    """
    if bound not in ("both", "mt", "ml"):
        raise ParameterError(f"bound must be 'both', 'mt' or 'ml', got {bound!r}")
    c = bures_angle(omega_abs)
    omega = min(1.0, max(0.0, float(omega_abs)))
    mt = dE_mt if dE_mt > ROUND_OFF else None
    if bound == "mt":
        dE_ml = None
    r_mt = qsl_ratio(c, mt) if bound != "ml" else None
    r_ml = qsl_ratio(c, dE_ml) if bound != "mt" else None
    return BoundReport(
        tau=float(tau), omega_abs=omega, bures_angle=c, dE_mt=float(dE_mt),
        dE_ml=dE_ml, R_mt=r_mt, R_ml=r_ml)


def thread_count(requested: Optional[int] = None) -> int:
    """Worker count from the argument or ``QSL_THREADS`` (0 = one per CPU)."""
    if requested is None:
        raw = os.environ.get("QSL_THREADS", "1")
        try:
            requested = int(raw)
        except ValueError:
            raise ParameterError(f"QSL_THREADS must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ParameterError("thread count must be >= 0")
    return requested or (os.cpu_count() or 1)


def _annotate(exc: Exception, tau: float) -> Exception:
    msg = f"at tau={tau!r}: {exc}"
    try:
        return type(exc)(msg)
    except Exception:
        return QSLError(msg)


def scan_R(evaluator: Callable[[float], BoundReport], taus: Sequence[float],
           threads: Optional[int] = None) -> list[BoundReport]:
    """Evaluate ``evaluator`` on every tau; output order follows input order."""
    taus = [float(t) for t in taus]
    if any(t <= 0 for t in taus):
        raise ParameterError("all tau values must be > 0")
    if any(b <= a for a, b in zip(taus, taus[1:])):
        raise ParameterError("tau values must be strictly increasing")

    def run(tau):
        try:
            return evaluator(tau)
        except Exception as exc:
            raise _annotate(exc, tau) from exc

    workers = min(thread_count(threads), max(1, len(taus)))
    if workers == 1:
        return [run(t) for t in taus]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, taus))


# --- extremum analysis -------------------------------------------------------

def _uniform_step(taus: np.ndarray) -> float:
    if taus.ndim != 1 or taus.size < 3:
        raise InsufficientDataError("need at least 3 samples for central differences")
    d = np.diff(taus)
    if np.any(d <= 0):
        raise ParameterError("tau samples must be strictly increasing")
    h = float(d.mean())
    if np.max(np.abs(d - h)) > 1e-6 * h:
        raise ParameterError("tau samples must be uniformly spaced")
    return h


def _central(x: np.ndarray, h: float) -> np.ndarray:
    """First central difference at interior nodes (length n-2)."""
    return (x[2:] - x[:-2]) / (2 * h)


def _second(x: np.ndarray, h: float) -> np.ndarray:
    return (x[2:] - 2 * x[1:-1] + x[:-2]) / h**2


def _sign_changes(d: np.ndarray) -> list[tuple[int, int]]:
    """Pairs ``(i, k)`` of interior indices where ``d`` changes sign.

    Exact zeros between the two are skipped; NaNs break the search.
    """
    out = []
    last = None
    for j, v in enumerate(d):
        if not np.isfinite(v):
            last = None
            continue
        if v == 0:
            continue
        if last is not None and np.sign(v) != np.sign(d[last]):
            out.append((last, j))
        last = j
    return out


def find_extrema(taus, R, C, dE=None) -> list[Extremum]:
    """Interior extrema of ``R(tau)`` from sign changes of ``dR/dtau``.

    Each extremum is reported at the grid node with the extreme R value
    between the two sign-changing difference nodes and classified with
    ``dE * C'' - C * dE''`` (negative means maximum).  When ``dE`` is not
    given it is recovered as ``C / R``; if that fails the sign of ``R''``
    is used instead.
    """
    taus = np.asarray(taus, dtype=float)
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    h = _uniform_step(taus)
    if R.shape != taus.shape or C.shape != taus.shape:
        raise ParameterError("taus, R and C must have equal lengths")
    if dE is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            dE = np.where(R != 0, C / R, np.nan)
    dE = np.asarray(dE, dtype=float)

    dR = _central(R, h)
    found = []
    for i, k in _sign_changes(dR):
        rising = dR[i] > 0
        window = np.arange(i, k + 1) + 1  # interior offsets -> absolute indices
        j = int(window[np.argmax(R[window])] if rising else window[np.argmin(R[window])])
        s = slice(j - 1, j + 2)
        if np.all(np.isfinite(dE[s])):
            c2 = _second(C[s], h)[0]
            e2 = _second(dE[s], h)[0]
            test = dE[j] * c2 - C[j] * e2
            scale = abs(dE[j] * c2) + abs(C[j] * e2)
        else:
            test = _second(R[s], h)[0]
            scale = abs(test)
        if scale == 0 or abs(test) <= 1e-10 * scale:
            kind = "inflexion"
        else:
            kind = "maximum" if test < 0 else "minimum"
        found.append(Extremum(float(taus[j]), kind, float(R[j]), float(C[j])))
    return found


def _log_derivative_mismatch(taus, C, dE):
    """Interpolated (tau*, C'/C, dE'/dE) at roots of the central-difference R'."""
    h = _uniform_step(taus)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.where((C != 0) & (dE != 0), C / dE, np.nan)
        lc = _central(C, h) / C[1:-1]
        le = _central(dE, h) / dE[1:-1]
    lc[~np.isfinite(lc)] = np.nan
    le[~np.isfinite(le)] = np.nan
    dR = _central(R, h)
    out = []
    for i, k in _sign_changes(dR):
        if k != i + 1:
            continue
        frac = dR[i] / (dR[i] - dR[k])
        vals = (lc[i] + frac * (lc[k] - lc[i]), le[i] + frac * (le[k] - le[i]))
        if not all(np.isfinite(vals)):
            continue
        out.append((float(taus[i + 1] + frac * h), *map(float, vals)))
    return out


def stationarity_check(taus, C, dE) -> list[StationarityPoint]:
    """Compare ``C'/C`` with ``dE'/dE`` at each extremum of ``R = C/dE``.

    Samples where ``C`` or ``dE`` vanish are skipped.
    """
    taus = np.asarray(taus, dtype=float)
    C = np.asarray(C, dtype=float)
    dE = np.asarray(dE, dtype=float)
    fine = _log_derivative_mismatch(taus, C, dE)
    coarse = []
    if taus.size >= 7:
        coarse = _log_derivative_mismatch(taus[::2], C[::2], dE[::2])
    h = float(taus[1] - taus[0])
    out = []
    for tau, lhs, rhs in fine:
        near = [abs(a - b) for t, a, b in coarse if abs(t - tau) <= 2 * h]
        trunc = abs(near[0] - abs(lhs - rhs)) if near else math.nan
        out.append(StationarityPoint(tau, lhs, rhs, trunc))
    return out
