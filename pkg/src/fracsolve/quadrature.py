"""Gauss-Laguerre rules for the weight exp(-y) on [0, inf) and the sinc baseline rule."""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigvalsh_tridiagonal
from scipy.special import eval_laguerre

MAX_RULE_SIZE = 2000

# exp(y) overflows float64 a little above 709.78
SINC_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class GaussRule:
    """M-point Gaussian rule for the weight W(y) = exp(-y).

    Attributes
    ----------
    nodes : ndarray
        Abscissae, strictly increasing and positive.
    weights : ndarray
        Nonnegative weights summing to one. Weights of the largest nodes
        underflow to zero once M grows past a few hundred.
    """

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self):
        return self.nodes.size

    def to_text(self):
        return "".join(f"{y:.17g} {w:.17g}\n" for y, w in zip(self.nodes, self.weights))


@dataclass(frozen=True)
class SincRule:
    """Equal-step rule on the real line with nodes j*k, j = -n_minus..n_plus."""

    step: float
    n_minus: int
    n_plus: int

    @property
    def indices(self):
        return np.arange(-self.n_minus, self.n_plus + 1)

    @property
    def nodes(self):
        return self.indices * self.step

    @property
    def weights(self):
        return np.full(self.size, self.step)

    @property
    def size(self):
        return self.n_minus + self.n_plus + 1

    def to_text(self):
        return "".join(f"{y:.17g} {w:.17g}\n" for y, w in zip(self.nodes, self.weights))


def laguerre_recurrence(n):
    """Return ``(a_n, b_n)`` for the orthonormal Laguerre polynomials.

    ``b_0 = 1`` and, for ``n >= 1``, ``b_n = n`` and ``a_n = 2n - 1``.
    ``a_0`` is not part of the recurrence and is returned as ``nan``.
    """
    if n < 0:
        raise ValueError(f"recurrence index must be nonnegative, got {n}")
    if n == 0:
        return math.nan, 1.0
    return float(2 * n - 1), float(n)


def jacobi_matrix(M):
    """Dense symmetric tridiagonal Jacobi matrix J_M."""
    diag, off = _jacobi_bands(M)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def _jacobi_bands(M):
    n = np.arange(1, M + 1, dtype=float)
    return 2.0 * n - 1.0, n[:-1].copy()


@lru_cache(maxsize=4096)
def _gauss_laguerre_cached(M):
    diag, off = _jacobi_bands(M)
    nodes = eigvalsh_tridiagonal(diag, off)
    # one Newton step on L_M sharpens the small nodes;  y L_M' = M (L_M - L_{M-1})
    with np.errstate(over="ignore", invalid="ignore"):
        L_M = eval_laguerre(M, nodes)
        step = L_M / (M * (L_M - eval_laguerre(M - 1, nodes)))
    nodes = nodes - np.where(np.isfinite(step), nodes * step, 0.0)
    # Christoffel weight: 1 / sum_{k<M} p_k(y)^2 = y / ((M+1) L_{M+1}(y))^2,
    # assembled in logs so that weights near the underflow limit stay accurate
    L_next = np.abs(eval_laguerre(M + 1, nodes))
    with np.errstate(divide="ignore", over="ignore"):
        log_w = np.log(nodes) - 2.0 * (math.log(M + 1) + np.log(L_next))
    weights = np.where(np.isfinite(L_next), np.exp(log_w), 0.0)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GaussRule(nodes, weights)


def gauss_laguerre(M):
    """M-point Gauss rule for exp(-y) on [0, inf) via the Jacobi matrix.

    Nodes are the eigenvalues of J_M. Each weight is the squared first
    component of the matching unit eigenvector (times b_0^2 = 1). That
    eigenvector is the vector of orthonormal polynomial values at the node,
    so the weight is evaluated from Laguerre polynomial values instead of
    an eigenvector solve.
    """
    M = int(M)
    if not 1 <= M <= MAX_RULE_SIZE:
        raise ValueError(f"rule size must lie in [1, {MAX_RULE_SIZE}], got {M}")
    return _gauss_laguerre_cached(M)


def sinc_counts(s, N):
    """Point counts and step of the sinc baseline for truth dimension N."""
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {s}")
    if N < 4:
        raise ValueError(f"truth dimension must be at least 4, got {N}")
    k = 1.0 / math.log(math.sqrt(N))
    n_plus = math.ceil(math.pi**2 / (4.0 * s * k * k))
    n_minus = math.ceil(math.pi**2 / (4.0 * (1.0 - s) * k * k))
    return k, n_minus, n_plus


def sinc_rule(s, N):
    """Sinc rule with the mesh-dependent counts used by the reference method."""
    k, n_minus, n_plus = sinc_counts(s, N)
    return SincRule(k, n_minus, n_plus)


def sinc_rule_for_size(s, total):
    """Sinc rule with ``total`` nodes, split and stepped like :func:`sinc_counts`.

    The counts keep the ratio n_plus / n_minus = (1 - s) / s and the step
    solves n_plus = pi^2 / (4 s k^2) for k.
    """
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {s}")
    if total < 3:
        raise ValueError("a sinc rule needs at least one node on each side of zero")
    free = total - 1
    n_plus = min(max(int(round(free * (1.0 - s))), 1), free - 1)
    n_minus = free - n_plus
    k = math.pi / (2.0 * math.sqrt(s * n_plus))
    return SincRule(k, n_minus, n_plus)


def apply_rule(rule, g):
    """Return sum_j w_j g(y_j); ``g`` is called once on the array of nodes."""
    nodes = np.asarray(rule.nodes, dtype=float)
    values = np.asarray(g(nodes), dtype=float)
    if values.shape != nodes.shape:
        values = np.broadcast_to(values, nodes.shape)
    bad = ~np.isfinite(values)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise ValueError(f"integrand is not finite at node {j} (y={nodes[j]:.17g})")
    return float(np.dot(rule.weights, values))
