"""Sparse SPD solves and extremal eigenvalues of the pencil (S, M)."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceError, NotPositiveDefiniteError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    """Solver and eigen-iteration tolerances used throughout the package."""

    solve_rtol: float = 1e-12
    eig_min_rtol: float = 1e-6
    eig_max_rtol: float = 1e-3
    eig_max_iter: int = 500
    refine_steps: int = 3
    # direct factorization up to level 8 (254^2 unknowns)
    direct_max_dim: int = 254**2


TOLERANCES = Tolerances()


def _relative_residual(A, x, b):
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return 0.0
    return float(np.linalg.norm(A @ x - b) / bnorm)


class SpdFactorization:
    """Factorization of a sparse SPD matrix with a residual-checked ``solve``.

    Up to ``direct_max_dim`` unknowns a symmetric-mode sparse LU without
    pivoting is used; its pivots are the LDL^T diagonal, so a nonpositive
    pivot proves the matrix is not positive definite. Larger systems fall
    back to Jacobi-preconditioned conjugate gradients.
    """

    def __init__(self, A, tol=TOLERANCES):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got {A.shape}")
        self.A = A
        self.tol = tol
        self.iterations = []
        self.direct = A.shape[0] <= tol.direct_max_dim
        if self.direct:
            self._lu = spla.splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
            pivots = self._lu.U.diagonal()
            bad = np.flatnonzero(~(pivots > 0))
            if bad.size:
                k = int(bad[0])
                raise NotPositiveDefiniteError(self._lu.perm_c[k], pivots[k])
        else:
            diag = A.diagonal()
            if np.any(diag <= 0):
                k = int(np.flatnonzero(diag <= 0)[0])
                raise NotPositiveDefiniteError(k, diag[k])
            self._precond = sp.diags(1.0 / diag)

    @property
    def shape(self):
        return self.A.shape

    def _solve_once(self, b):
        if self.direct:
            return self._lu.solve(b)
        count = [0]

        def callback(_):
            count[0] += 1

        x, info = spla.cg(self.A, b, rtol=0.1 * self.tol.solve_rtol, atol=0.0,
                          M=self._precond, maxiter=20 * self.A.shape[0], callback=callback)
        self.iterations.append(count[0])
        if info != 0:
            raise ConvergenceError("conjugate gradients did not converge", best=x)
        return x

    def solve(self, b):
        """Solve ``A x = b``; ``b`` may hold several right-hand sides as columns."""
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self.solve(b[:, j]) for j in range(b.shape[1])])
        x = self._solve_once(b)
        for _ in range(self.tol.refine_steps):
            if _relative_residual(self.A, x, b) <= self.tol.solve_rtol:
                break
            x = x + self._solve_once(b - self.A @ x)
        return x


def factorize(A, tol=TOLERANCES):
    return SpdFactorization(A, tol)


def solve_shifted(S, M, alpha, beta, f, tol=TOLERANCES):
    """Solve ``(alpha S + beta M) w = f``."""
    if alpha < 0 or beta < 0:
        raise ValueError("shift coefficients must be nonnegative")
    if alpha == 0 and beta == 0:
        raise ValueError("alpha and beta cannot both vanish")
    return factorize(alpha * S + beta * M, tol).solve(f)


def m_inverse_norm(M, f, factor=None):
    """sqrt(f^T M^{-1} f), the L2 norm of the projection of the data onto V."""
    factor = factor or factorize(M)
    f = np.asarray(f, dtype=float)
    return float(math.sqrt(max(np.dot(f, factor.solve(f)), 0.0)))


def m_norm(M, v):
    v = np.asarray(v, dtype=float)
    return float(math.sqrt(max(np.dot(v, M @ v), 0.0)))


@dataclass(frozen=True)
class SpectralBounds:
    """Extremal eigenvalues of (S, M) and of M, with the derived constants."""

    lambda_min_SM: float
    lambda_max_SM: float
    lambda_min_M: float

    @property
    def C2(self):
        return 1.0 / self.lambda_min_SM

    @property
    def K2(self):
        return 1.0 / self.lambda_max_SM

    @property
    def C2_tilde(self):
        return max(1.0, self.C2)


def _lanczos_extreme(apply_op, inner, v0, which, rtol, max_iter):
    """Largest or smallest Ritz value of an operator self-adjoint in ``inner``.

    Full reorthogonalization; stops once the extreme Ritz value moves by
    less than ``rtol`` relative over two consecutive steps.
    """
    q = v0 / math.sqrt(inner(v0, v0))
    Q = [q]
    alphas, betas = [], []
    previous = None
    stable = 0
    value = None
    for k in range(max_iter):
        w = apply_op(Q[-1])
        alpha = inner(w, Q[-1])
        alphas.append(alpha)
        for qj in Q:
            w = w - inner(w, qj) * qj
        for qj in Q:
            w = w - inner(w, qj) * qj
        beta = math.sqrt(max(inner(w, w), 0.0))
        ritz = eigh_tridiagonal(np.array(alphas), np.array(betas), eigvals_only=True)
        value = ritz[-1] if which == "max" else ritz[0]
        if previous is not None and abs(value - previous) <= rtol * abs(value):
            stable += 1
            if stable >= 2:
                return float(value)
        else:
            stable = 0
        previous = value
        if beta <= 1e-14 * abs(value):
            return float(value)
        betas.append(beta)
        Q.append(w / beta)
    raise ConvergenceError("Lanczos iteration hit its cap", best=value)


def extremal_generalized_eigs(S, M, tol=TOLERANCES, seed=0):
    """Return :class:`SpectralBounds` for the pencil (S, M).

    lambda_min(S, M) comes from inverse iteration on M^{-1} S (one S solve
    per step). lambda_max(S, M) and lambda_min(M) come from Lanczos runs,
    the first in the M inner product with one M solve per step.
    """
    S = sp.csc_matrix(S)
    M = sp.csc_matrix(M)
    if S.shape != M.shape:
        raise ValueError("S and M must have the same shape")
    n = S.shape[0]
    S_factor = factorize(S, tol)
    M_factor = factorize(M, tol)

    # inverse iteration; the all-ones start overlaps the positive ground mode
    x = np.ones(n)
    x /= m_norm(M, x)
    lam = float(x @ (S @ x))
    converged = False
    for _ in range(tol.eig_max_iter):
        x = S_factor.solve(M @ x)
        x /= m_norm(M, x)
        Sx = S @ x
        new = float(x @ Sx)
        # residual of the pencil eigenpair measured in the M^{-1} norm
        r = Sx - new * (M @ x)
        res = m_inverse_norm(M, r, M_factor) / new
        change = abs(new - lam) / new
        lam = new
        if change <= 0.01 * tol.eig_min_rtol and res <= math.sqrt(tol.eig_min_rtol):
            converged = True
            break
    if not converged:
        raise ConvergenceError("inverse iteration for lambda_min(S, M) did not converge",
                               best=lam, residual=res)

    rng = np.random.default_rng(seed)
    v0 = rng.standard_normal(n)
    lam_max = _lanczos_extreme(
        lambda v: M_factor.solve(S @ v),
        lambda u, v: float(u @ (M @ v)),
        v0, "max", 0.01 * tol.eig_max_rtol, tol.eig_max_iter,
    )
    lam_min_M = _lanczos_extreme(
        lambda v: M @ v, lambda u, v: float(u @ v), v0, "min",
        0.01 * tol.eig_min_rtol, tol.eig_max_iter,
    )
    logger.debug("spectral bounds: %.10g %.6g %.6g", lam, lam_max, lam_min_M)
    return SpectralBounds(lam, lam_max, lam_min_M)
