"""Computable quadrature error for the partitioned resolvent integral.

The error of an M-point Gauss-Laguerre rule on the two half-line integrals
reduces, after diagonalizing the pencil (S, M), to the scalar functional

    g_M(a, b) = | int_0^inf e^{-y} / (1 + a e^{-b y}) dy
                  - sum_j tau_j / (1 + a e^{-b y_j}) |

maximized over a spectral interval.  Everything here is matrix free: only
the extremal generalized eigenvalues of (S, M) enter.
"""

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import ConvergenceError
from .kato import beta0, split_orders
from .quadrature import MAX_RULE_SIZE, _gauss_laguerre_cached, gauss_laguerre

DEFAULT_GRID_SIZE = 200
DEFAULT_DELTA = 1e-4


@dataclass(frozen=True)
class SpectralIntervals:
    """Intervals I- = [K^2, C^2] and I+ = [1/C^2, 1/K^2] enclosing the spectrum."""

    K2: float
    C2: float

    def __post_init__(self):
        if not 0.0 < self.K2 <= self.C2:
            raise ValueError(f"need 0 < K^2 <= C^2, got K^2={self.K2}, C^2={self.C2}")

    @property
    def minus(self):
        return (self.K2, self.C2)

    @property
    def plus(self):
        return (1.0 / self.C2, 1.0 / self.K2)

    @property
    def C2_tilde(self):
        return max(1.0, self.C2)

    @classmethod
    def from_bounds(cls, bounds):
        return cls(K2=bounds.K2, C2=bounds.C2)

    @classmethod
    def singleton(cls, t):
        """Intervals for a single eigenvalue t of the pencil."""
        return cls(K2=1.0 / t, C2=1.0 / t)


def a_grid(interval, size=DEFAULT_GRID_SIZE):
    """Log-uniform grid on ``interval`` with both endpoints included."""
    lo, hi = interval
    if lo == hi:
        return np.array([float(lo)])
    return np.logspace(math.log10(lo), math.log10(hi), size)


def _integrand(y, a, b):
    return math.exp(-y) / (1.0 + a * math.exp(-b * y))


@lru_cache(maxsize=1 << 16)
def reference_integral(a, b):
    """int_0^inf exp(-y) / (1 + a exp(-b y)) dy to about 1e-13 absolute.

    Adaptive Gauss-Kronrod on [0, Y], Y = max(y0, 0) + 40, with breakpoints
    around the transition y0 = log(a) / b whose width is 1 / b.  The tail
    beyond Y is below exp(-40) and is added in closed form to first order.
    """
    a = float(a)
    b = float(b)
    if a < 0.0:
        raise ValueError(f"a must be nonnegative, got {a}")
    if a == 0.0:
        return 1.0
    y0 = max(math.log(a) / b, 0.0)
    Y = y0 + 40.0
    points = sorted({p for p in (y0 + c / b for c in (-30, -10, -3, -1, 0, 1, 3, 10, 30))
                     if 0.0 < p < Y})
    with warnings.catch_warnings():
        # QUADPACK flags roundoff once it is at machine precision
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        value, err = integrate.quad(
            _integrand, 0.0, Y, args=(a, b), points=points or None,
            epsabs=1e-15, epsrel=1e-14, limit=1000,
        )
    if err > 1e-12:
        raise ConvergenceError(
            f"reference integral did not converge for a={a}, b={b}", best=value, residual=err
        )
    return value + math.exp(-Y) / (1.0 + a * math.exp(-b * Y))


def reference_integral_gauss(a, b, M=512):
    """Cross-check of :func:`reference_integral` with a large Gauss-Laguerre rule."""
    rule = gauss_laguerre(M)
    return float(np.sum(rule.weights / (1.0 + a * np.exp(-b * rule.nodes))))


@lru_cache(maxsize=4096)
def _reference_on_grid(lo, hi, size, b):
    grid = a_grid((lo, hi), size)
    ref = np.array([reference_integral(float(a), b) for a in grid])
    ref.setflags(write=False)
    return grid, ref


def _rule_sums(rule, a, b):
    decay = np.exp(-b * rule.nodes)
    return (rule.weights[None, :] / (1.0 + np.outer(a, decay))).sum(axis=1)


def g_M(rule, a, b):
    """Absolute quadrature error of ``rule`` on 1 / (1 + a exp(-b y)).

    ``a`` may be an array; the result then has the same shape.
    """
    if b <= 1.0:
        raise ValueError(f"b must exceed 1, got {b}")
    a_arr = np.atleast_1d(np.asarray(a, dtype=float))
    if np.any(a_arr <= 0):
        raise ValueError("a must be positive")
    ref = np.array([reference_integral(float(x), float(b)) for x in a_arr])
    out = np.abs(ref - _rule_sums(rule, a_arr, b))
    return out if np.ndim(a) else float(out[0])


def _sup_g(M, interval, b, grid_size):
    grid, ref = _reference_on_grid(float(interval[0]), float(interval[1]), grid_size, float(b))
    # the cached builder also serves M_tilde searches run with a raised cap
    return float(np.max(np.abs(ref - _rule_sums(_gauss_laguerre_cached(int(M)), grid, b))))


def G_minus(M, s, intervals, grid_size=DEFAULT_GRID_SIZE):
    s_minus, _ = split_orders(s)
    return beta0(s_minus) * _sup_g(M, intervals.minus, 1.0 / s_minus, grid_size)


def G_plus(M, s, intervals, grid_size=DEFAULT_GRID_SIZE):
    _, s_plus = split_orders(s)
    return beta0(s_plus) * _sup_g(M, intervals.plus, 1.0 / s_plus, grid_size)


def G_pm(M, s, intervals, a_grid_size=DEFAULT_GRID_SIZE):
    """Return ``(G-, G+)``: beta_0(s_pm) times the grid maximum of g_M(a, 1/s_pm)."""
    return G_minus(M, s, intervals, a_grid_size), G_plus(M, s, intervals, a_grid_size)


def _smallest_stable_size(G, delta, cap, run=4):
    """Smallest M <= cap with G(m) <= delta/2 for all m in M..M+run-1.

    Each candidate window is checked from its right end, so a failure at m
    rules out every window containing m and the next candidate starts at
    m + 1. The answer is that of a plain left-to-right scan.
    """
    target = delta / 2.0
    best = math.inf
    start = 1
    while start <= cap:
        for m in range(start + run - 1, start - 1, -1):
            value = G(m)
            best = min(best, value)
            if value > target:
                start = m + 1
                break
        else:
            return start
    raise ConvergenceError(f"no rule size up to {cap} reaches G <= {target:.3e}", best=best)


def M_tilde(delta, s, intervals, a_grid_size=DEFAULT_GRID_SIZE, cap=MAX_RULE_SIZE - 3):
    """Smallest certified rule sizes ``(M-, M+, M- + M+)`` for tolerance ``delta``.

    The search covers windows whose largest rule has at most ``cap + 3`` points.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if cap < 1:
        raise ValueError(f"cap must be at least 1, got {cap}")
    m_minus = _smallest_stable_size(
        lambda m: G_minus(m, s, intervals, a_grid_size), delta, cap
    )
    m_plus = _smallest_stable_size(lambda m: G_plus(m, s, intervals, a_grid_size), delta, cap)
    return m_minus, m_plus, m_minus + m_plus


def quadrature_error_bound(M_minus, M_plus, s, C2_tilde, f_norm, intervals,
                           a_grid_size=DEFAULT_GRID_SIZE):
    """Bound on the M-norm distance between the quadrature and exact-integral solutions."""
    g_minus, g_plus = G_minus(M_minus, s, intervals, a_grid_size), G_plus(
        M_plus, s, intervals, a_grid_size
    )
    return C2_tilde * f_norm * (g_minus + g_plus)


def error_surface(M_values, s_values, intervals, a_grid_size=DEFAULT_GRID_SIZE):
    """Rows ``(M, s, G-, G+)`` over the product grid."""
    rows = []
    for s in s_values:
        for M in M_values:
            rows.append((int(M), float(s)) + G_pm(int(M), float(s), intervals, a_grid_size))
    return rows


def uniform_in_s_bound(M, intervals, b_values, a_grid_size=DEFAULT_GRID_SIZE):
    """max over a in I and b in ``b_values`` of g_M(a, b); a reporting sweep."""
    worst = 0.0
    for b in b_values:
        for interval in (intervals.minus, intervals.plus):
            worst = max(worst, _sup_g(M, interval, float(b), a_grid_size))
    return worst
