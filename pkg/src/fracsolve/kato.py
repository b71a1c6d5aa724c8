"""Fractional Laplacian solves through the partitioned resolvent integral.

With s- = 1 - s and s+ = s, the solution is

    u(s) = sum_{sigma in (-, +)} beta0(s_sigma) int_0^inf w_sigma(y / s_sigma) e^{-y} dy

where (S + e^{-y} M) w- = f and (e^{-y} S + M) w+ = f.  Both half-line
integrals are discretized with Gauss-Laguerre rules.
"""

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import QuadratureOverflowError
from .linalg import TOLERANCES, extremal_generalized_eigs, factorize, m_inverse_norm
from .quadrature import SINC_EXP_LIMIT, gauss_laguerre

S_MIN = 1e-3
S_MAX = 1.0 - 1e-3


def beta0(s):
    """sinc(s) = sin(pi s) / (pi s), with the limit 1 at s = 0."""
    s = float(s)
    if s < 0.0 or s > 1.0:
        raise ValueError(f"beta0 is defined on [0, 1], got {s}")
    x = math.pi * s
    if x < 1e-4:
        return 1.0 - x * x / 6.0 + x**4 / 120.0
    return math.sin(x) / x


def split_orders(s):
    """Return ``(s_minus, s_plus) = (1 - s, s)``."""
    return 1.0 - s, s


def _check_order(s):
    if not S_MIN <= s <= S_MAX:
        raise ValueError(f"fractional order must lie in [{S_MIN}, {S_MAX}], got {s}")


def thread_count(n_jobs=None):
    """Number of workers, capped by the FRACSOLVE_THREADS environment variable."""
    cap = os.environ.get("FRACSOLVE_THREADS")
    n = 1 if n_jobs is None else int(n_jobs)
    if n < 0:
        n = os.cpu_count() or 1
    if cap:
        n = min(n, max(int(cap), 1))
    return max(n, 1)


@dataclass
class KatoConfig:
    """Fractional order, rule sizes and auto-selection tolerance.

    ``M_minus``/``M_plus`` left as ``None`` are filled from the certified
    rule sizes for ``delta``.
    """

    s: float
    M_minus: int = None
    M_plus: int = None
    quadrature: str = "gq"
    delta: float = 1e-4

    def __post_init__(self):
        self.s = float(self.s)
        _check_order(self.s)
        if self.quadrature not in ("gq", "sq"):
            raise ValueError(f"quadrature must be 'gq' or 'sq', got {self.quadrature!r}")
        for name in ("M_minus", "M_plus"):
            value = getattr(self, name)
            if value is not None and int(value) < 1:
                raise ValueError(f"{name} must be at least 1, got {value}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    @property
    def s_minus(self):
        return 1.0 - self.s

    @property
    def s_plus(self):
        return self.s


@dataclass
class ErrorReport:
    """Bounds attached to one fractional solve, all in the L2 (M-) norm."""

    s: float
    f_norm: float
    C2_tilde: float = math.nan
    stability_bound: float = math.nan
    G_minus: float = math.nan
    G_plus: float = math.nan
    quadrature_bound: float = math.nan
    rbm_certificate: float = math.nan

    def to_text(self):
        return "".join(f"{k} = {v:.17g}\n" for k, v in vars(self).items())


@dataclass
class FractionalSolution:
    coefficients: np.ndarray
    report: ErrorReport
    method: str
    M_minus: int
    M_plus: int
    n_solves: int = 0
    timings: dict = field(default_factory=dict)

    def to_text(self, level=None):
        header = f"# level {level}\n" if level is not None else ""
        values = np.atleast_2d(self.coefficients.T).T
        body = "".join(" ".join(f"{v:.17g}" for v in row) + "\n" for row in values)
        return header + body


def solve_w_minus(S, M, y, f, tol=TOLERANCES):
    """Solve (S + e^{-y} M) w = f for y >= 0."""
    if y < 0:
        raise ValueError(f"y must be nonnegative, got {y}")
    return factorize(S + math.exp(-y) * M, tol).solve(f)


def solve_w_plus(S, M, y, f, tol=TOLERANCES):
    """Solve (e^{-y} S + M) w = f for y >= 0."""
    if y < 0:
        raise ValueError(f"y must be nonnegative, got {y}")
    return factorize(math.exp(-y) * S + M, tol).solve(f)


def stability_bound(C2_tilde, f_norm):
    return 4.0 * C2_tilde / math.pi * f_norm


def resolve_rule_sizes(config, intervals):
    """Rule sizes for ``config``; certified sizes for ``delta`` fill any gaps."""
    if config.M_minus is not None and config.M_plus is not None:
        return int(config.M_minus), int(config.M_plus)
    from .quaderror import M_tilde

    m_minus, m_plus, _ = M_tilde(config.delta, config.s, intervals)
    return (
        int(config.M_minus) if config.M_minus is not None else m_minus,
        int(config.M_plus) if config.M_plus is not None else m_plus,
    )


def gq_terms(config, M_minus, M_plus):
    """Quadrature terms ``(sigma, weight, y)`` in the mandated summation order.

    The weight already carries beta0(s_sigma); y is the node divided by s_sigma.
    """
    terms = []
    for sigma, size, order in (("-", M_minus, config.s_minus), ("+", M_plus, config.s_plus)):
        rule = gauss_laguerre(size)
        b0 = beta0(order)
        for y, tau in zip(rule.nodes, rule.weights):
            terms.append((sigma, b0 * tau, y / order))
    return terms


def _shifted(S, M, sigma, y):
    z = math.exp(-y)
    return S + z * M if sigma == "-" else z * S + M


def _run_solves(jobs, n_jobs):
    workers = thread_count(n_jobs)
    if workers == 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: job(), jobs))


def _load_norm(M, f, M_factor=None):
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        return m_inverse_norm(M, f, M_factor)
    return max(m_inverse_norm(M, f[:, j], M_factor) for j in range(f.shape[1]))


def solve_fractional_gq(config, S, M, f, bounds=None, n_jobs=None, tol=TOLERANCES):
    """Gauss-Laguerre fractional solve; exactly M- + M+ shifted solves.

    ``f`` may hold several load vectors as columns. ``bounds`` are the
    spectral bounds of (S, M), computed when not supplied.
    """
    from .quaderror import SpectralIntervals

    if config.quadrature != "gq":
        raise ValueError("solve_fractional_gq needs a config with quadrature='gq'")
    timings = {}
    if bounds is None:
        t0 = time.perf_counter()
        bounds = extremal_generalized_eigs(S, M, tol)
        timings["spectral"] = time.perf_counter() - t0
    intervals = SpectralIntervals.from_bounds(bounds)

    t0 = time.perf_counter()
    M_minus, M_plus = resolve_rule_sizes(config, intervals)
    terms = gq_terms(config, M_minus, M_plus)
    timings["rules"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    jobs = [
        (lambda sigma=sigma, y=y: factorize(_shifted(S, M, sigma, y), tol).solve(f))
        for sigma, _, y in terms
    ]
    solutions = _run_solves(jobs, n_jobs)
    timings["solves"] = time.perf_counter() - t0

    u = np.zeros_like(np.asarray(f, dtype=float))
    for (_, weight, _), w in zip(terms, solutions):
        u += weight * w

    f_norm = _load_norm(M, f)
    g_minus, g_plus = _G_pair(M_minus, M_plus, config.s, intervals)
    report = ErrorReport(
        s=config.s,
        f_norm=f_norm,
        C2_tilde=bounds.C2_tilde,
        stability_bound=stability_bound(bounds.C2_tilde, f_norm),
        G_minus=g_minus,
        G_plus=g_plus,
        quadrature_bound=bounds.C2_tilde * f_norm * (g_minus + g_plus),
    )
    timings["total"] = sum(timings.values())
    return FractionalSolution(u, report, "gq", M_minus, M_plus, len(terms), timings)


def _G_pair(M_minus, M_plus, s, intervals):
    from .quaderror import G_minus, G_plus

    return G_minus(M_minus, s, intervals), G_plus(M_plus, s, intervals)


def solve_fractional_sq(rule, s, S, M, f, n_jobs=None, tol=TOLERANCES):
    """Sinc baseline on the unpartitioned integral.

    u = beta(s) k sum_j e^{(1-s) j k} (S + e^{j k} M)^{-1} f, beta(s) = sin(pi s)/pi.
    The shifted operator is formed as written; nodes with e^{y} out of range
    raise :class:`QuadratureOverflowError`.
    """
    _check_order(s)
    if rule.n_minus < 1 or rule.n_plus < 1:
        raise ValueError("sinc rule needs at least one node on each side of zero")
    nodes = rule.nodes
    over = np.flatnonzero(np.abs(nodes) > SINC_EXP_LIMIT)
    if over.size:
        raise QuadratureOverflowError(nodes[over[0]], SINC_EXP_LIMIT)
    t0 = time.perf_counter()
    jobs = [(lambda y=y: factorize(S + math.exp(y) * M, tol).solve(f)) for y in nodes]
    solutions = _run_solves(jobs, n_jobs)
    beta = math.sin(math.pi * s) / math.pi
    u = np.zeros_like(np.asarray(f, dtype=float))
    for y, w in zip(nodes, solutions):
        u += (beta * rule.step * math.exp((1.0 - s) * y)) * w
    elapsed = time.perf_counter() - t0
    report = ErrorReport(s=s, f_norm=_load_norm(M, f))
    return FractionalSolution(
        u, report, "sq", rule.n_minus, rule.n_plus, rule.size, {"solves": elapsed, "total": elapsed}
    )


def scalar_kato(t, s, rule_pair):
    """Partitioned quadrature approximation of t^{-s} for a scalar t > 0.

    The resolvents become 1 / (t + e^{-y/s-}) and 1 / (t e^{-y/s+} + 1);
    ``rule_pair`` is ``(rule_minus, rule_plus)``.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    s_minus, s_plus = split_orders(s)
    rule_minus, rule_plus = rule_pair
    minus = np.sum(rule_minus.weights / (t + np.exp(-rule_minus.nodes / s_minus)))
    plus = np.sum(rule_plus.weights / (t * np.exp(-rule_plus.nodes / s_plus) + 1.0))
    return float(beta0(s_minus) * minus + beta0(s_plus) * plus)


def scalar_kato_exact(t, s):
    """The same partitioned expression with exact half-line integrals."""
    from .quaderror import reference_integral

    s_minus, s_plus = split_orders(s)
    minus = reference_integral(1.0 / t, 1.0 / s_minus) / t
    plus = reference_integral(t, 1.0 / s_plus)
    return beta0(s_minus) * minus + beta0(s_plus) * plus



def split_total(total, M_minus_ref, M_plus_ref):
    """Split ``total`` nodes between the two half-lines in the ratio of a reference pair."""
    total = int(total)
    if total < 2:
        raise ValueError(f"a partitioned rule needs at least 2 nodes, got {total}")
    m_minus = int(round(total * M_minus_ref / (M_minus_ref + M_plus_ref)))
    m_minus = min(max(m_minus, 1), total - 1)
    return m_minus, total - m_minus
