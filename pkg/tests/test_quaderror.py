import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh
from scipy.special import hyp2f1

from conftest import system
from fracsolve.errors import ConvergenceError
from fracsolve.kato import KatoConfig, beta0, scalar_kato, solve_fractional_gq
from fracsolve.linalg import m_norm
from fracsolve.quadrature import gauss_laguerre
from fracsolve.quaderror import (
    G_minus,
    G_plus,
    G_pm,
    M_tilde,
    SpectralIntervals,
    _smallest_stable_size,
    a_grid,
    error_surface,
    g_M,
    quadrature_error_bound,
    reference_integral,
    reference_integral_gauss,
    uniform_in_s_bound,
)

INTERVALS = SpectralIntervals(1e-6, 2.0)


def hypergeometric(a, b):
    # x = exp(-y) turns the half-line integral into int_0^1 dx / (1 + a x^b)
    return hyp2f1(1.0, 1.0 / b, 1.0 + 1.0 / b, -a)


@pytest.mark.parametrize("b", [1.01, 1.5, 2.0, 10.0, 100.0, 1000.0])
@pytest.mark.parametrize("a", [1e-8, 1e-3, 0.5, 1.0, 30.0, 1e4, 1e8])
def test_reference_integral_hypergeometric(a, b):
    assert abs(reference_integral(a, b) - hypergeometric(a, b)) < 1e-13


@pytest.mark.parametrize("a,b", [(1e-6, 1.1), (2.0, 2.0), (1e6, 1.25), (1e3, 5.0)])
def test_reference_integral_against_large_rule(a, b):
    assert abs(reference_integral(a, b) - reference_integral_gauss(a, b)) < 1e-12


def test_reference_integral_limits():
    assert reference_integral(0.0, 3.0) == 1.0
    assert reference_integral(1e-300, 3.0) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(ValueError):
        reference_integral(-1.0, 2.0)


def test_intervals():
    I = SpectralIntervals(1e-4, 0.5)
    assert I.minus == (1e-4, 0.5) and I.plus == (2.0, 1e4)
    assert I.C2_tilde == 1.0 and SpectralIntervals(1e-4, 3.0).C2_tilde == 3.0
    assert SpectralIntervals.singleton(4.0).minus == (0.25, 0.25)
    with pytest.raises(ValueError):
        SpectralIntervals(1.0, 0.5)
    grid = a_grid((1e-3, 10.0), 5)
    assert grid[0] == pytest.approx(1e-3) and grid[-1] == pytest.approx(10.0)
    np.testing.assert_allclose(np.diff(np.log10(grid)), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 80), st.floats(1e-6, 1e6), st.floats(1.05, 50.0))
def test_g_bounded(M, a, b):
    # integrand and rule sum both lie in (0, 1)
    assert 0.0 <= g_M(gauss_laguerre(M), a, b) <= 1.0


def test_g_vanishes_for_tiny_a():
    assert g_M(gauss_laguerre(5), 1e-300, 2.0) < 1e-15
    values = g_M(gauss_laguerre(5), np.array([1e-300, 1.0]), 2.0)
    assert values.shape == (2,)


def test_g_validation():
    with pytest.raises(ValueError):
        g_M(gauss_laguerre(3), 1.0, 1.0)
    with pytest.raises(ValueError):
        g_M(gauss_laguerre(3), 0.0, 2.0)


def test_g_decreases_in_M():
    values = [g_M(gauss_laguerre(M), 1.0, 2.0) for M in range(1, 61)]
    assert values[-1] < 1e-11
    # not monotone step by step, but a clear downward trend over blocks of ten
    block = [max(values[i:i + 10]) for i in range(0, 60, 10)]
    assert all(b1 < b0 for b0, b1 in zip(block, block[1:]))


@pytest.mark.parametrize("s", [0.1, 0.5, 0.9])
def test_G_at_most_beta0(s):
    for M in (1, 3, 20):
        g_minus, g_plus = G_pm(M, s, INTERVALS)
        assert 0 <= g_minus <= beta0(1 - s) and 0 <= g_plus <= beta0(s)


def test_G_is_grid_maximum():
    s, M = 0.3, 7
    grid = a_grid(INTERVALS.plus)
    direct = beta0(s) * max(g_M(gauss_laguerre(M), float(a), 1 / s) for a in grid)
    assert G_plus(M, s, INTERVALS) == pytest.approx(direct, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=60), st.floats(0.05, 0.95))
def test_stable_size_matches_plain_scan(values, delta):
    G = lambda m: values[(m - 1) % len(values)]
    cap = len(values)
    naive = None
    for M in range(1, cap + 1):
        if all(G(m) <= delta / 2 for m in range(M, M + 4)):
            naive = M
            break
    if naive is None:
        with pytest.raises(ConvergenceError):
            _smallest_stable_size(G, delta, cap)
    else:
        assert _smallest_stable_size(G, delta, cap) == naive


def test_stable_size_skips_evaluations():
    calls = []

    def G(m):
        calls.append(m)
        return 1.0 if m < 50 else 0.0

    assert _smallest_stable_size(G, 1e-3, 100) == 50
    assert len(calls) < 60


def test_M_tilde_validation():
    with pytest.raises(ValueError):
        M_tilde(0.0, 0.5, INTERVALS)
    with pytest.raises(ValueError):
        M_tilde(1e-3, 0.5, INTERVALS, cap=0)
    with pytest.raises(ConvergenceError):
        M_tilde(1e-10, 0.5, INTERVALS, cap=5)


def test_M_tilde_monotone_in_delta():
    sizes = [M_tilde(d, 0.4, INTERVALS)[:2] for d in (1e-2, 1e-4, 1e-6, 1e-8)]
    for (a0, b0), (a1, b1) in zip(sizes, sizes[1:]):
        assert a1 >= a0 and b1 >= b0


def test_M_tilde_certifies_its_window():
    delta, s = 1e-5, 0.35
    m_minus, m_plus, total = M_tilde(delta, s, INTERVALS)
    assert total == m_minus + m_plus
    for m in range(m_plus, m_plus + 4):
        assert G_plus(m, s, INTERVALS) <= delta / 2
    assert any(G_plus(m, s, INTERVALS) > delta / 2 for m in range(m_plus - 4, m_plus))
    for m in range(m_minus, m_minus + 4):
        assert G_minus(m, s, INTERVALS) <= delta / 2


def test_scalar_error_controlled_on_grid():
    s, M_minus, M_plus = 0.6, 6, 9
    rules = (gauss_laguerre(M_minus), gauss_laguerre(M_plus))
    g_minus, g_plus = G_minus(M_minus, s, INTERVALS), G_plus(M_plus, s, INTERVALS)
    for a in a_grid(INTERVALS.minus):
        t = 1.0 / a
        err = abs(scalar_kato(t, s, rules) - t ** (-s))
        assert err <= INTERVALS.C2_tilde * (g_minus + g_plus) * (1 + 1e-9)


def exact_fractional(level, s):
    sysl = system(level)
    lam, V = eigh(sysl.S.toarray(), sysl.M.toarray())
    return sysl, V @ (lam ** (-s) * (V.T @ sysl.f))


@pytest.mark.parametrize("s", [0.2, 0.5, 0.8])
@pytest.mark.parametrize("sizes", [(3, 5), (8, 20), (15, 60)])
def test_bound_dominates_actual_error(s, sizes):
    sysl, exact = exact_fractional(3, s)
    intervals = SpectralIntervals.from_bounds(sysl.bounds)
    sol = solve_fractional_gq(KatoConfig(s, *sizes), sysl.S, sysl.M, sysl.f, bounds=sysl.bounds)
    bound = quadrature_error_bound(*sizes, s, intervals.C2_tilde, sol.report.f_norm, intervals)
    err = m_norm(sysl.M, sol.coefficients - exact)
    assert err <= bound
    assert bound <= 2 * intervals.C2_tilde * sol.report.f_norm


def test_error_surface_and_uniform_bound():
    rows = error_surface([2, 4], [0.3, 0.7], INTERVALS)
    assert [r[:2] for r in rows] == [(2, 0.3), (4, 0.3), (2, 0.7), (4, 0.7)]
    assert rows[1][3] == pytest.approx(G_plus(4, 0.3, INTERVALS))
    worst = uniform_in_s_bound(5, INTERVALS, [1 / 0.3, 1 / 0.7])
    for s in (0.3, 0.7):
        g_minus, g_plus = G_pm(5, s, INTERVALS)
        assert g_minus / beta0(1 - s) <= worst * (1 + 1e-12)
        assert g_plus / beta0(s) <= worst * (1 + 1e-12)


def test_asymmetry_of_rule_sizes():
    m_minus, m_plus, _ = M_tilde(1e-4, 0.1, INTERVALS)
    assert m_plus > m_minus
    m_minus, m_plus, _ = M_tilde(1e-4, 0.9, INTERVALS)
    assert m_minus > m_plus


@pytest.mark.slow
def test_plus_size_scales_like_inverse_order_with_raised_cap():
    # s M+ stays within a factor three down to s = 0.01 once rules past 2000 are allowed
    products = []
    for s in (0.1, 0.05, 0.02, 0.01):
        _, m_plus, _ = M_tilde(1e-4, s, INTERVALS, cap=2100)
        products.append(s * m_plus)
    assert max(products) / min(products) <= 3.0
    assert math.isclose(products[-1], 20.22, rel_tol=1e-9)


def test_grid_doubling_changes_G_little():
    for M, s in ((5, 0.3), (20, 0.5), (60, 0.1)):
        coarse = G_pm(M, s, INTERVALS, 200)
        fine = G_pm(M, s, INTERVALS, 400)
        for a, b in zip(coarse, fine):
            assert abs(a - b) <= 0.05 * b


@pytest.mark.parametrize("s", [0.1, 0.3, 0.5, 0.7, 0.9])
@pytest.mark.parametrize("sizes", [(2, 3), (5, 8), (10, 30), (20, 60)])
def test_bound_on_discrete_eigenmode(s, sizes):
    sysl = system(4)
    x1, x2 = sysl.mesh.interior_points()
    v = np.sin(np.pi * x1) * np.sin(np.pi * x2)
    mu = float(v @ (sysl.S @ v)) / float(v @ (sysl.M @ v))
    rules = (gauss_laguerre(sizes[0]), gauss_laguerre(sizes[1]))
    err = abs(scalar_kato(mu, s, rules) - mu ** (-s)) * m_norm(sysl.M, v)
    intervals = SpectralIntervals.from_bounds(sysl.bounds)
    bound = quadrature_error_bound(*sizes, s, intervals.C2_tilde, m_norm(sysl.M, v), intervals)
    assert err <= bound
    assert quadrature_error_bound(*sizes, s, 1.0, 0.0, intervals) == 0.0
