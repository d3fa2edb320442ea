import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad, quad

from qsl_lab.chain import (
    ChainParams,
    PerturbativeChain,
    chain_overlap,
    chain_report,
    diagonalize,
    dyson_amplitudes,
    first_order_integral,
    momenta,
    second_order_integral,
    strength_factors,
    szn_matrix_elements,
)
from qsl_lab.core import TimeGrid
from qsl_lab.errors import ParameterError
from qsl_lab.exact import drive_operator, exact_observables, ground_state, xy_matrix

DESK = ChainParams(N=8, J=1.0, gamma=0.2, h0=1.0, h1=1.0, tauH=0.01)


def test_param_validation():
    for bad in ({"N": 7}, {"N": 2}, {"gamma": 1.5}, {"gamma": -0.1}, {"tauH": 0.0},
                {"h1": math.inf}):
        with pytest.raises(ParameterError):
            DESK.with_(**bad)
    with pytest.raises(ParameterError, match=r"\[0, 1\]"):
        DESK.with_(gamma=1.5)


def test_momenta_are_antiperiodic():
    k = momenta(6)
    np.testing.assert_allclose(np.exp(1j * k * 6), -1)
    np.testing.assert_allclose(np.sort(k), -np.sort(k)[::-1])
    assert len(set(np.round(k, 12))) == 6


def test_bogoliubov_coefficients():
    spec = diagonalize(ChainParams(10, 1.3, 0.6, 0.8, 1.0, 0.1))
    np.testing.assert_allclose(spec.u**2 + spec.v**2, 1, atol=1e-14)
    k = spec.momenta
    order = np.argsort(-k)
    np.testing.assert_allclose(spec.u[order], spec.u, atol=1e-14)
    np.testing.assert_allclose(spec.v[order], -spec.v, atol=1e-14)
    assert spec.bogoliubov.shape == (10, 2)


def test_ising_point_ground_energy_matches_known_closed_form():
    # gamma = 1, h0 = J: eps_k = 4 J |cos(k/2)|
    p = ChainParams(12, 1.0, 1.0, 1.0, 1.0, 0.1)
    spec = diagonalize(p)
    np.testing.assert_allclose(spec.energies, 4 * np.abs(np.cos(spec.momenta / 2)), atol=1e-13)
    assert spec.ground_energy == pytest.approx(-0.5 * spec.energies.sum(), abs=1e-12)


@pytest.mark.parametrize("N", [4, 6, 8, 10])
def test_ground_energy_matches_dense(N):
    rng = np.random.default_rng(N)
    for _ in range(5):
        J = rng.uniform(0.2, 2.0)
        p = ChainParams(N, J, rng.uniform(0, 1), J * rng.uniform(1, 3), 1.0, 0.01)
        e, _ = ground_state(xy_matrix(N, p.J, p.gamma, p.h0))
        assert diagonalize(p).ground_energy == pytest.approx(e, abs=1e-9)


@pytest.mark.parametrize("params", [
    DESK,
    ChainParams(6, 0.7, 0.9, 1.1, 1.0, 0.01),
    ChainParams(8, 1.0, 0.0, 1.5, 1.0, 0.01),
])
def test_matrix_elements_against_dense_moments(params):
    """m00 and the pair spectrum reproduce <S>, <S (H0-E)^n S> from ED."""
    spec = diagonalize(params)
    m = szn_matrix_elements(spec, params)
    H0 = xy_matrix(params.N, params.J, params.gamma, params.h0)
    e, gs = ground_state(H0)
    S = drive_operator(params.N)
    phi = S * gs
    assert m.m00 == pytest.approx(gs @ phi, abs=1e-12)
    iu = np.triu_indices(params.N, 1)
    w = np.abs(m.m2[iu]) ** 2
    E = spec.pair_energies()[iu]
    shifted = phi - (gs @ phi) * gs
    for n in (0, 1, 2, 3):
        v = shifted.copy()
        for _ in range(n):
            v = H0 @ v - e * v
        assert np.sum(w * E**n) == pytest.approx(shifted @ v, abs=1e-10)


@given(st.integers(2, 30).map(lambda n: 2 * n), st.floats(0.1, 2.0), st.floats(0, 1),
       st.floats(-3, 3))
@settings(max_examples=60, deadline=None)
def test_completeness_sum_rule(N, J, gamma, h0):
    # S^2 = 1/4 exactly, and the vacuum only reaches itself and pairs
    spec = diagonalize(ChainParams(N, J, gamma, h0, 1.0, 0.1))
    m = szn_matrix_elements(spec)
    assert m.m00**2 + m.pair_weight() == pytest.approx(0.25, abs=1e-9)
    np.testing.assert_allclose(m.m2, -m.m2.T, atol=1e-15)
    np.testing.assert_allclose(m.hop, m.hop.T, atol=1e-15)


def test_pairs_mapping():
    m = szn_matrix_elements(diagonalize(DESK))
    pairs = m.pairs()
    assert len(pairs) == 8 * 7 // 2
    assert all(a < b for a, b in pairs)


@pytest.mark.parametrize("E", [0.0, 0.7, 5.0])
def test_first_order_integral_matches_quadrature(E):
    r, tau = 3.0, 2.0
    re = quad(lambda t: math.exp(-r * t) * math.cos(E * t), 0, tau, epsabs=1e-13)[0]
    im = quad(lambda t: math.exp(-r * t) * math.sin(E * t), 0, tau, epsabs=1e-13)[0]
    assert first_order_integral(E, r, tau) == pytest.approx(re + 1j * im, abs=1e-11)


@pytest.mark.parametrize("alpha,beta", [(-1 + 2j, -0.5 - 1j), (-2.0, -2.0), (0.3j - 1, 1.5j - 1)])
def test_second_order_integral_matches_quadrature(alpha, beta):
    tau = 1.5

    def part(fn):
        return dblquad(lambda tp, t: fn(np.exp(alpha * t + beta * tp)), 0, tau, 0, lambda t: t,
                       epsabs=1e-12)[0]

    ref = part(np.real) + 1j * part(np.imag)
    assert second_order_integral(alpha, beta, tau) == pytest.approx(ref, abs=1e-9)


def test_amplitudes_scale_with_drive_strength():
    spec = diagonalize(DESK)
    m = szn_matrix_elements(spec)
    a = dyson_amplitudes(spec, m, DESK, 5.0)
    b = dyson_amplitudes(spec, m, DESK.with_(h1=0.3), 5.0)
    assert b.a0_1 == pytest.approx(0.3 * a.a0_1, rel=1e-13)
    np.testing.assert_allclose(b.a2_1, 0.3 * a.a2_1, rtol=1e-13, atol=0)
    assert b.a0_2 == pytest.approx(0.09 * a.a0_2, rel=1e-13)
    np.testing.assert_allclose(b.a2_2, 0.09 * a.a2_2, rtol=1e-12, atol=1e-30)


def test_zero_drive_keeps_vacuum():
    p = DESK.with_(h1=0.0)
    om, om_abs = PerturbativeChain(p).overlap(10.0)
    assert om_abs == 1.0
    r = chain_report(p, 10.0)
    assert r.bures_angle == 0.0 and r.R_mt == 0.0


def test_second_order_vacuum_amplitude_consistent_with_unitarity():
    # |1 + a0_1 + a0_2|^2 + sum |a2_1|^2 = 1 + O(h1^3)
    spec = diagonalize(DESK)
    m = szn_matrix_elements(spec)
    for h1 in (0.2, 0.1):
        st_ = dyson_amplitudes(spec, m, DESK.with_(h1=h1), 50.0)
        iu = np.triu_indices(8, 1)
        norm = abs(1 + st_.a0_1 + st_.a0_2) ** 2 + np.sum(np.abs(st_.a2_1[iu]) ** 2)
        assert abs(norm - 1) < 20 * h1**3 * DESK.tauH**2


def test_overlap_matches_exact_dynamics():
    ex = exact_observables(DESK, 100.0)
    ov, om = chain_overlap(dyson_amplitudes(diagonalize(DESK), szn_matrix_elements(diagonalize(DESK)),
                                            DESK, 100.0))
    assert om == pytest.approx(ex.omega_abs, abs=1e-9)
    # the phase carries the ground energy
    assert ov == pytest.approx(ex.omega, abs=1e-6)


def test_energy_and_variance_series_match_exact():
    p = DESK.with_(h1=0.5, gamma=0.5)
    grid = TimeGrid.for_tau(2.0, max_dt=p.tauH / 20)
    ex = exact_observables(p, 2.0, grid=grid)
    chain = PerturbativeChain(p)
    np.testing.assert_allclose(chain.energy_series(grid).values, ex.energy.values, atol=5e-3 * 0.5**3)
    np.testing.assert_allclose(chain.std_series(grid).values ** 2, ex.std.values**2,
                               atol=1e-3 * 0.5**3)
    assert chain.initial_energy == pytest.approx(ex.e0, abs=1e-12)


def test_energy_derivative_equals_drive_work():
    # d<H>/dt = <dH/dt> = h1 f'(t) <S>; to this order <S> ~ m00 + O(h1)
    chain = PerturbativeChain(DESK.with_(h1=0.05))
    t = np.linspace(0.002, 0.05, 25)
    h = 1e-6
    dE = (chain.energy_values(t + h) - chain.energy_values(t - h)) / (2 * h)
    work = -0.05 / DESK.tauH * np.exp(-t / DESK.tauH) * chain.elements.m00
    np.testing.assert_allclose(dE, work, atol=0.05 * np.max(np.abs(work)))


def test_variance_nonnegative_everywhere():
    chain = PerturbativeChain(ChainParams(20, 1.0, 0.5, 1.2, 2.0, 0.05))
    v = chain.variance_values(np.linspace(0, 10, 2001))
    assert np.all(v >= 0)


def test_strength_factors():
    spec = diagonalize(ChainParams(100, 1.0, 0.2, 1.0, 1.0, 0.01))
    sf = strength_factors(ChainParams(100, 1.0, 0.2, 1.0, 1.0, 0.01), spec)
    assert sf.s1 == pytest.approx(1e-4)
    assert sf.s3 == pytest.approx(1e-2, rel=1e-2)
    assert sf.s2 < sf.s1
    assert sf.largest == sf.s3


def test_signed_ml_energy_is_minus_initial_drive_shift():
    # after the drive is gone the mean energy barely moves, so the average
    # sits about h1 * m00 below the initial energy
    chain = PerturbativeChain(DESK)
    grid = DESK.quadrature_grid(100.0)
    assert chain.signed_ml_energy(grid) == pytest.approx(-chain.elements.m00, rel=1e-2)
    assert chain.ml_energy(grid) is None
