"""Brute-force reference for the driven chain: dense matrices and time stepping.

Basis states are bit strings with site 1 as the most significant bit
(the ordering produced by ``kron(site1, site2, ...)``); bit 0 is spin up,
``sz = +1``.  Only small chains are supported (``2**N <= 4096``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.linalg import eigh, expm

from .chain import DRIVE_CUTOFF_DECAYS, ChainParams
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
from .errors import NumericalConsistencyError, ParameterError, ResourceError

MAX_SITES = 12
NORM_TOL = 1e-9
RESIDUAL_TOL = 1e-10
SCHEMES = ("rk4", "magnus4")


def _check_size(N: int) -> None:
    if int(N) != N or N < 2 or N % 2:
        raise ParameterError(f"N must be a positive even integer, got {N!r}")
    if N > MAX_SITES:
        raise ResourceError(f"dense problem with N={N} exceeds the limit N <= {MAX_SITES}")


def _sz_diagonal(N: int) -> np.ndarray:
    """``sz`` eigenvalue of every site for every basis state, shape (2**N, N)."""
    idx = np.arange(2**N)
    bits = (idx[:, None] >> (N - 1 - np.arange(N))[None, :]) & 1
    return 1.0 - 2.0 * bits


def xy_matrix(N: int, J: float, gamma: float, h0: float) -> np.ndarray:
    """Dense real matrix of the undriven periodic XY chain.

    Flipping two neighbouring spins has amplitude ``J`` if they were
    antiparallel and ``J gamma`` if they were parallel.
    """
    _check_size(N)
    dim = 2**N
    sz = _sz_diagonal(N)
    H = np.zeros((dim, dim))
    H[np.diag_indices(dim)] = -h0 * sz.sum(axis=1)
    idx = np.arange(dim)
    for i in range(N):
        j = (i + 1) % N
        mask = (1 << (N - 1 - i)) | (1 << (N - 1 - j))
        flipped = idx ^ mask
        amp = np.where(sz[:, i] == sz[:, j], J * gamma, J)
        H[flipped, idx] += amp
    return H


def drive_operator(N: int) -> np.ndarray:
    """Diagonal of ``sz_N / 2``."""
    _check_size(N)
    return 0.5 * _sz_diagonal(N)[:, -1]


def dense_hamiltonian(params: ChainParams, t: float) -> np.ndarray:
    """``H0 + h1 exp(-t/tauH) sz_N / 2`` as a dense matrix."""
    H = xy_matrix(params.N, params.J, params.gamma, params.h0)
    H[np.diag_indices_from(H)] += float(params.drive(t)) * drive_operator(params.N)
    return H


def ground_state(H: np.ndarray) -> tuple[float, np.ndarray]:
    """Lowest eigenpair of a Hermitian matrix; the residual is verified."""
    w, v = eigh(H, subset_by_index=[0, 0])
    vec = v[:, 0]
    res = np.linalg.norm(H @ vec - w[0] * vec)
    if res > RESIDUAL_TOL * max(1.0, abs(w[0])):
        raise NumericalConsistencyError(f"ground-state residual {res:.2e} too large")
    return float(w[0]), vec


def parity(psi: np.ndarray, N: int) -> float:
    """Expectation value of ``prod_j sz_j``."""
    p = np.prod(_sz_diagonal(N), axis=1)
    return float(np.real(np.vdot(psi, p * psi)))


class _Propagator:
    """One-step maps for ``i psi' = (H0 + f(t) S) psi`` with diagonal ``S``."""

    def __init__(self, params: ChainParams, scheme: str):
        if scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
        self.params = params
        self.scheme = scheme
        self.H0 = xy_matrix(params.N, params.J, params.gamma, params.h0)
        self.S = drive_operator(params.N)

    def apply(self, t: float, psi: np.ndarray) -> np.ndarray:
        # real H0 times the (re, im) pairs avoids casting H0 to complex
        pairs = np.ascontiguousarray(psi, dtype=complex).view(np.float64).reshape(-1, 2)
        h0psi = (self.H0 @ pairs).reshape(-1).view(np.complex128)
        return h0psi + self.params.h1 * math.exp(-t / self.params.tauH) * self.S * psi

    def step(self, t: float, h: float, psi: np.ndarray) -> np.ndarray:
        if self.scheme == "rk4":
            f = lambda s, y: -1j * self.apply(s, y)
            k1 = f(t, psi)
            k2 = f(t + h / 2, psi + h / 2 * k1)
            k3 = f(t + h / 2, psi + h / 2 * k2)
            k4 = f(t + h, psi + h * k3)
            return psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        # fourth-order Magnus: Hamiltonians frozen at the two Gauss points
        c = math.sqrt(3) / 6
        s1 = float(self.params.drive(t + h * (0.5 - c)))
        s2 = float(self.params.drive(t + h * (0.5 + c)))
        Hm = self.H0 + np.diag(0.5 * (s1 + s2) * self.S)
        comm = self.S[:, None] * self.H0 - self.H0 * self.S[None, :]   # [S, H0]
        gen = -1j * h * Hm - (math.sqrt(3) / 12) * h**2 * (s2 - s1) * comm
        return expm(gen) @ psi


@dataclass(frozen=True)
class DenseTrajectory:
    grid: TimeGrid
    states: np.ndarray   # (steps + 1, 2**N)


def default_step(params: ChainParams) -> float:
    return min(params.tauH / 20, 0.005)


def drive_off_time(params: ChainParams) -> float:
    """Time after which ``exp(-t/tauH)`` is below 2e-35 and the drive is dropped."""
    return DRIVE_CUTOFF_DECAYS * params.tauH


def propagate(psi0: np.ndarray, params: ChainParams, grid: TimeGrid,
              scheme: str = "rk4", max_dt: float | None = None) -> Iterator[np.ndarray]:
    """Yield the state at every node of ``grid``.

    Each grid interval is split into equal substeps no longer than
    ``max_dt`` (default ``min(tauH/20, 0.005)``).  Once the drive has
    decayed below double precision the remaining evolution is done exactly
    in the eigenbasis of H0.
    """
    prop = _Propagator(params, scheme)
    max_dt = max_dt or default_step(params)
    nsub = max(1, math.ceil(grid.dt / max_dt - 1e-9))
    h = grid.dt / nsub
    t_off = drive_off_time(params)
    psi = np.asarray(psi0, dtype=complex).copy()
    n0 = np.linalg.norm(psi)
    coeffs = None   # eigenbasis amplitudes once the drive is off
    yield psi.copy()
    for i in range(1, grid.steps + 1):
        t = (i - 1) * grid.dt
        if t < t_off:
            for j in range(nsub):
                psi = prop.step(t + j * h, h, psi)
            drift = abs(np.linalg.norm(psi) - n0)
            if drift > NORM_TOL:
                raise NumericalConsistencyError(f"norm drift {drift:.2e} at t={t + grid.dt:.6g}")
            yield psi.copy()
            continue
        if coeffs is None:
            w, V = np.linalg.eigh(prop.H0)
            V = V.astype(complex)
            phase = np.exp(-1j * w * grid.dt)
            coeffs = V.conj().T @ psi
        coeffs = coeffs * phase
        yield V @ coeffs


def evolve(psi0: np.ndarray, params: ChainParams, grid: TimeGrid,
           scheme: str = "rk4", max_dt: float | None = None) -> DenseTrajectory:
    """Materialized trajectory on ``grid`` (memory grows with the node count)."""
    states = np.array(list(propagate(psi0, params, grid, scheme, max_dt)))
    return DenseTrajectory(grid, states)


@dataclass(frozen=True)
class ExactObservables:
    omega: complex
    energy: ObservableSeries
    std: ObservableSeries
    e0: float
    ground_energy: float

    @property
    def omega_abs(self) -> float:
        return min(1.0, abs(self.omega))

    @property
    def signed_ml(self) -> float:
        return integrate_time_average(self.energy) - self.e0


def exact_observables(params: ChainParams, tau: float, scheme: str = "rk4",
                      grid: TimeGrid | None = None,
                      max_dt: float | None = None) -> ExactObservables:
    """Overlap, energy and energy spread of the exactly driven ground state.

    The state is stepped while the drive is active.  Afterwards H(t) = H0 to
    double precision, so energy and variance are constant and the final
    state follows from one exact H0 propagation.
    """
    grid = grid or params.quadrature_grid(tau)
    prop = _Propagator(params, scheme)
    e_gs, gs = ground_state(prop.H0)
    psi0 = gs.astype(complex)
    if params.h1 == 0:
        # an undriven eigenstate only picks up a phase
        flat = np.full(grid.steps + 1, e_gs)
        return ExactObservables(complex(np.exp(-1j * e_gs * tau)), ObservableSeries(grid, flat),
                                ObservableSeries(grid, np.zeros_like(flat)), e_gs, e_gs)
    t = grid.nodes()
    t_off = drive_off_time(params)
    last = int(min(grid.steps, math.ceil(t_off / grid.dt)))
    energy = np.empty_like(t)
    var = np.empty_like(t)
    sub = TimeGrid(last * grid.dt, last) if last >= 2 else None

    def moments(tt, psi):
        hpsi = prop.apply(tt, psi)
        mean = float(np.real(np.vdot(psi, hpsi)))
        return mean, float(np.linalg.norm(hpsi - mean * psi) ** 2)

    psi = psi0
    if sub is not None:
        for i, psi in enumerate(propagate(psi0, params, sub, scheme, max_dt)):
            energy[i], var[i] = moments(t[i], psi)
    else:
        energy[0], var[0] = moments(0.0, psi0)
        last = 0
    if last < grid.steps:
        mean, v = moments(t_off * 10, psi)   # drive switched off
        energy[last + 1:] = mean
        var[last + 1:] = v
        w, V = np.linalg.eigh(prop.H0)
        psi = V @ (np.exp(-1j * w * (tau - t[last])) * (V.conj().T @ psi))
    omega = complex(np.vdot(psi0, psi))
    e0 = float(np.real(np.vdot(psi0, prop.apply(0.0, psi0))))
    return ExactObservables(omega, ObservableSeries(grid, energy),
                            ObservableSeries(grid, std_from_variance(var)), e0, e_gs)


def exact_report(params: ChainParams, tau: float, scheme: str = "rk4",
                 bound: str = "both") -> BoundReport:
    obs = exact_observables(params, tau, scheme)
    return make_report(tau, obs.omega_abs, mt_denominator(obs.std),
                       ml_denominator(obs.energy, obs.e0), bound)
