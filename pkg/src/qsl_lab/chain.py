"""Perturbative dynamics of the XY chain driven on its last site.

    H0    = J/2 (1+g) sum sx_i sx_{i+1} + J/2 (1-g) sum sy_i sy_{i+1} - h0 sum sz_i
    H1(t) = h1 exp(-t/tauH) sz_N / 2

with periodic boundaries and even N.  After a Jordan-Wigner transformation
(``sz_j = 1 - 2 n_j``) the even-parity sector is a free-fermion problem with
antiperiodic momenta ``k = (2m-1) pi / N``.  A Bogoliubov rotation per pair
``(k, -k)`` gives

    H0 = E_gs + sum_k eps_k g_k^+ g_k,
    eps_k = 2 sqrt((J cos k + h0)^2 + (J g sin k)^2),
    c_k = u_k g_k + i v_k g_{-k}^+        (u even, v odd in k).

The drive operator ``S = sz_N / 2`` is quadratic in the fermions:

    S = m00 + sum_{k<q} (m2[k,q] g_k^+ g_q^+ + h.c.) + sum_{kq} M[k,q] g_k^+ g_q,

so it couples the vacuum only to itself and to two-quasiparticle states.
The Dyson series of the interaction-picture propagator is carried to second
order, with every time integral done in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .core import (
    BoundReport,
    ObservableSeries,
    TimeGrid,
    integrate_time_average,
    make_report,
    ml_denominator,
    mt_denominator,
    std_from_variance,
)
from .errors import ParameterError

# beyond this many decay times exp(-t/tauH) < 2e-35 and the drive is dropped
DRIVE_CUTOFF_DECAYS = 80.0


@dataclass(frozen=True)
class ChainParams:
    N: int
    J: float
    gamma: float
    h0: float
    h1: float
    tauH: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 4 or self.N % 2:
            raise ParameterError(f"N must be an even integer >= 4, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("J", "gamma", "h0", "h1", "tauH"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParameterError(f"gamma must lie in [0, 1], got {self.gamma!r}")
        if not self.tauH > 0:
            raise ParameterError(f"tauH must be > 0, got {self.tauH!r}")

    def with_(self, **changes) -> "ChainParams":
        return replace(self, **changes)

    def drive(self, t):
        return self.h1 * np.exp(-np.asarray(t, dtype=float) / self.tauH)

    def quadrature_grid(self, tau: float) -> TimeGrid:
        """Uniform grid with ``dt <= min(0.01, tau/1000, tauH/20)``."""
        return TimeGrid.for_tau(tau, max_dt=min(0.01, self.tauH / 20))


@dataclass(frozen=True)
class QuasiparticleSpectrum:
    momenta: np.ndarray
    energies: np.ndarray
    u: np.ndarray
    v: np.ndarray
    ground_energy: float

    @property
    def bogoliubov(self) -> np.ndarray:
        """``(u_k, v_k)`` pairs, shape ``(N, 2)``."""
        return np.column_stack([self.u, self.v])

    def pair_energies(self) -> np.ndarray:
        """``eps_k + eps_q`` for every ordered pair."""
        return self.energies[:, None] + self.energies[None, :]


@dataclass(frozen=True)
class PerturbationMatrixElements:
    """Quasiparticle representation of ``sz_N / 2``.

    ``m2`` is antisymmetric; ``m2[k, q]`` with ``k < q`` is the amplitude
    ``<0| g_q g_k S |0>``.  ``hop`` is the real symmetric number-conserving
    part.
    """

    m00: float
    m2: np.ndarray
    hop: np.ndarray

    def pairs(self) -> dict[tuple[int, int], complex]:
        i, j = np.triu_indices(self.m2.shape[0], 1)
        return {(int(a), int(b)): complex(self.m2[a, b]) for a, b in zip(i, j)}

    def pair_weight(self) -> float:
        """``sum_{k<q} |m2|^2`` = vacuum variance of S."""
        return float(np.sum(np.abs(np.triu(self.m2, 1)) ** 2))


@dataclass(frozen=True)
class DysonState:
    """Interaction-picture amplitudes of the driven vacuum at time ``tau``.

    Pair amplitudes are antisymmetric matrices; entry ``[k, q]`` with
    ``k < q`` multiplies ``g_k^+ g_q^+ |0>``.
    """

    tau: float
    a0_1: complex
    a2_1: np.ndarray
    a0_2: complex
    a2_2: np.ndarray
    ground_energy: float = 0.0

    @property
    def vacuum_amplitude(self) -> complex:
        return 1 + self.a0_1 + self.a0_2

    def pair_amplitudes(self) -> np.ndarray:
        """Upper-triangle pair amplitudes through second order, flattened."""
        iu = np.triu_indices(self.a2_1.shape[0], 1)
        return (self.a2_1 + self.a2_2)[iu]

    def norm_squared(self) -> float:
        return abs(self.vacuum_amplitude) ** 2 + float(np.sum(np.abs(self.pair_amplitudes()) ** 2))


@dataclass(frozen=True)
class StrengthFactors:
    s1: float
    s2: float
    s3: float
    d: float

    @property
    def largest(self) -> float:
        return max(self.s1, self.s2, self.s3)


def momenta(N: int) -> np.ndarray:
    """Antiperiodic momenta ``(2m-1) pi / N`` in ``(-pi, pi)``, ascending."""
    m = np.arange(-N // 2 + 1, N // 2 + 1)
    return (2 * m - 1) * np.pi / N


def diagonalize(params: ChainParams) -> QuasiparticleSpectrum:
    k = momenta(params.N)
    xi = 2 * (params.J * np.cos(k) + params.h0)
    pair = 2 * params.J * params.gamma * np.sin(k)
    eps = np.hypot(xi, pair)
    ratio = np.divide(xi, eps, out=np.ones_like(xi), where=eps > 0)
    u = np.sqrt(np.clip((1 + ratio) / 2, 0, 1))
    sign = 1.0 if params.J * params.gamma >= 0 else -1.0
    v = -np.sign(k) * sign * np.sqrt(np.clip((1 - ratio) / 2, 0, 1))
    positive = k > 0
    e_gs = float(np.sum(xi[positive] - eps[positive]) - params.N * params.h0)
    return QuasiparticleSpectrum(k, eps, u, v, e_gs)


def szn_matrix_elements(spec: QuasiparticleSpectrum,
                        params: ChainParams | None = None) -> PerturbationMatrixElements:
    """Quasiparticle matrix elements of ``sz_N / 2``.

    Because ``exp(i k N) = -1`` for every antiperiodic momentum,
    ``c_N = -(1/sqrt N) sum_q (u_q g_q - i v_q g_q^+)``; ``params`` is
    accepted for interface symmetry only.
    """
    u, v = spec.u, spec.v
    n = u.size
    m00 = 0.5 - float(np.sum(v**2)) / n
    m2 = 1j / n * (np.outer(u, v) - np.outer(v, u))
    hop = -(np.outer(u, u) - np.outer(v, v)) / n
    return PerturbationMatrixElements(m00, m2, hop)


# --- closed-form time integrals ----------------------------------------------

def _g(x, tau: float):
    """``integral_0^tau exp(x t) dt`` for complex ``x`` (never zero here)."""
    x = np.asarray(x, dtype=complex)
    return np.expm1(x * tau) / x


def first_order_integral(energy, rate: float, tau: float):
    """``integral_0^tau exp((iE - rate) t) dt``."""
    return _g(1j * np.asarray(energy, dtype=float) - rate, tau)


def second_order_integral(alpha, beta, tau: float):
    """``integral_0^tau dt exp(alpha t) integral_0^t dt' exp(beta t')``."""
    alpha = np.asarray(alpha, dtype=complex)
    beta = np.asarray(beta, dtype=complex)
    return (_g(alpha + beta, tau) - _g(alpha, tau)) / beta


def dyson_amplitudes(spec: QuasiparticleSpectrum, elems: PerturbationMatrixElements,
                     params: ChainParams, tau: float) -> DysonState:
    """Vacuum and two-quasiparticle amplitudes through second order in ``h1``."""
    if not tau > 0:
        raise ParameterError("tau must be > 0")
    r = 1.0 / params.tauH
    h1 = params.h1
    eps = spec.energies
    pair_e = spec.pair_energies()
    m00, m2, hop = elems.m00, elems.m2, elems.hop

    a0_1 = -1j * h1 * m00 * complex(first_order_integral(0.0, r, tau))
    a2_1 = -1j * h1 * m2 * first_order_integral(pair_e, r, tau)

    iu = np.triu_indices(eps.size, 1)
    w = np.abs(m2[iu]) ** 2
    e = pair_e[iu]
    vac_vac = m00**2 * complex(second_order_integral(-r, -r, tau))
    vac_pair = np.sum(w * second_order_integral(-1j * e - r, 1j * e - r, tau))
    a0_2 = -h1**2 * complex(vac_vac + vac_pair)

    via_vac = m00 * m2 * second_order_integral(1j * pair_e - r, -r, tau)
    # intermediate pair (a, q) reached from final (k, q) through hop[k, a]
    d_ka = eps[:, None] - eps[None, :]
    alpha = 1j * d_ka - r                      # [k, a]
    beta = 1j * pair_e - r                     # [a, q]
    kernel = second_order_integral(alpha[:, :, None], beta[None, :, :], tau)
    left = np.einsum("ka,aq,kaq->kq", hop, m2, kernel)
    a2_2 = -h1**2 * (via_vac + left - left.T)
    np.fill_diagonal(a2_2, 0)
    np.fill_diagonal(a2_1, 0)
    return DysonState(float(tau), a0_1, a2_1, a0_2, a2_2, spec.ground_energy)


def chain_overlap(state: DysonState, tau: float | None = None) -> tuple[complex, float]:
    """``<psi(0)|psi(tau)>`` of the normalized second-order state."""
    tau = state.tau if tau is None else tau
    norm = math.sqrt(state.norm_squared())
    ov = state.vacuum_amplitude * np.exp(-1j * state.ground_energy * tau) / norm
    return complex(ov), abs(state.vacuum_amplitude) / norm


def strength_factors(params: ChainParams, spec: QuasiparticleSpectrum) -> StrengthFactors:
    """Magnitude estimates for the second-order contributions.

    The energy scale is the smallest two-quasiparticle excitation energy.
    """
    e = np.sort(spec.energies)
    gap = float(e[0] + e[1])
    d = 1.0 / params.tauH**2 + gap**2
    h2 = params.h1**2
    return StrengthFactors(h2 * params.tauH**2, h2 / d**2, h2 / (params.tauH * d), d)


class PerturbativeChain:
    """Second-order perturbative treatment of one driven chain.

    Spectrum and matrix elements are computed once and reused for every
    requested final time.
    """

    def __init__(self, params: ChainParams):
        self.params = params

    @cached_property
    def spectrum(self) -> QuasiparticleSpectrum:
        return diagonalize(self.params)

    @cached_property
    def elements(self) -> PerturbationMatrixElements:
        return szn_matrix_elements(self.spectrum, self.params)

    @cached_property
    def _pairs(self):
        iu = np.triu_indices(self.params.N, 1)
        return np.abs(self.elements.m2[iu]) ** 2, self.spectrum.pair_energies()[iu]

    @property
    def initial_energy(self) -> float:
        """``<psi0| H(0) |psi0>`` with the drive at full strength."""
        return self.spectrum.ground_energy + self.params.h1 * self.elements.m00

    def dyson(self, tau: float) -> DysonState:
        return dyson_amplitudes(self.spectrum, self.elements, self.params, tau)

    def overlap(self, tau: float) -> tuple[complex, float]:
        return chain_overlap(self.dyson(tau), tau)

    def strength_factors(self) -> StrengthFactors:
        return strength_factors(self.params, self.spectrum)

    def _transient(self, t: np.ndarray):
        """Mask of nodes where the drive is not yet negligible."""
        return t < DRIVE_CUTOFF_DECAYS * self.params.tauH

    def _oscillating_sums(self, t, coeff_cos, coeff_sin, chunk=4096):
        """``sum_p (a_p cos(E_p t) + b_p sin(E_p t))`` for every ``t``."""
        _, e = self._pairs
        out = np.empty(t.size)
        for s in range(0, t.size, chunk):
            ph = np.outer(t[s:s + chunk], e)
            out[s:s + chunk] = np.cos(ph) @ coeff_cos + np.sin(ph) @ coeff_sin
        return out

    def energy_values(self, t) -> np.ndarray:
        """``<H(t)>`` of the normalized state, truncated at order ``h1^2``."""
        p = self.params
        t = np.asarray(t, dtype=float)
        w, e = self._pairs
        r = 1.0 / p.tauH
        h1 = p.h1
        den = e**2 + r**2
        decay = np.exp(-r * t)
        # sum_p E_p |a_p|^2 = h1^2 sum w E (1 - 2 e^{-rt} cos Et + e^{-2rt}) / (E^2 + r^2)
        base = h1**2 * np.sum(w * e / den)
        out = base * (1 + decay**2)
        # 2 h1 f Re sum conj(a_p) m2_p e^{iEt}
        #   = 2 h1^2 e^{-rt} sum w [(-E e^{-rt} + E cos Et - r sin Et)] / (E^2 + r^2)
        cross_const = -np.sum(w * e / den)
        out += 2 * h1**2 * decay**2 * cross_const
        mask = self._transient(t)
        if np.any(mask):
            tm = t[mask]
            osc_pop = self._oscillating_sums(tm, -2 * h1**2 * w * e / den, np.zeros_like(w))
            osc_cross = self._oscillating_sums(tm, w * e / den, -r * w / den)
            out[mask] += decay[mask] * osc_pop + 2 * h1**2 * decay[mask] * osc_cross
        out += self.spectrum.ground_energy + h1 * decay * self.elements.m00
        return out

    def variance_values(self, t) -> np.ndarray:
        """Energy variance through order ``h1^2``.

        To this order the variance is ``sum_p |E_p a_p + h1 f m2_p e^{iE_p t}|^2``
        which reduces to ``h1^2 sum_p w_p |iE_p - r e^{(iE_p - r)t}|^2 / (E_p^2 + r^2)``.
        """
        p = self.params
        t = np.asarray(t, dtype=float)
        w, e = self._pairs
        r = 1.0 / p.tauH
        den = e**2 + r**2
        decay = np.exp(-r * t)
        out = np.sum(w * e**2 / den) + decay**2 * r**2 * np.sum(w / den) + 0.0 * t
        mask = self._transient(t)
        if np.any(mask):
            osc = self._oscillating_sums(t[mask], np.zeros_like(w), -2 * r * w * e / den)
            out[mask] += decay[mask] * osc
        return p.h1**2 * out

    def energy_series(self, grid: TimeGrid) -> ObservableSeries:
        return ObservableSeries(grid, self.energy_values(grid.nodes()))

    def std_series(self, grid: TimeGrid) -> ObservableSeries:
        return ObservableSeries(grid, std_from_variance(self.variance_values(grid.nodes())))

    def ml_energy(self, grid: TimeGrid):
        return ml_denominator(self.energy_series(grid), self.initial_energy)

    def signed_ml_energy(self, grid: TimeGrid) -> float:
        return integrate_time_average(self.energy_series(grid)) - self.initial_energy

    def mt_energy(self, grid: TimeGrid) -> float:
        return mt_denominator(self.std_series(grid))

    def report(self, tau: float, grid: TimeGrid | None = None, bound: str = "both") -> BoundReport:
        grid = grid or self.params.quadrature_grid(tau)
        _, omega = self.overlap(tau)
        return make_report(tau, omega, self.mt_energy(grid), self.ml_energy(grid), bound)


def chain_ml_energy(params: ChainParams, tau: float, grid: TimeGrid | None = None):
    return PerturbativeChain(params).ml_energy(grid or params.quadrature_grid(tau))


def chain_mt_variance(params: ChainParams, tau: float, grid: TimeGrid | None = None) -> float:
    """Time-averaged energy standard deviation (the MT energy scale)."""
    return PerturbativeChain(params).mt_energy(grid or params.quadrature_grid(tau))


def chain_report(params: ChainParams, tau: float) -> BoundReport:
    return PerturbativeChain(params).report(tau)
