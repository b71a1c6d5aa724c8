"""Manufactured solutions of (-Laplace)^s u = f on the unit square."""

import math
from dataclasses import dataclass

import numpy as np

from .linalg import m_norm
from .mesh import Indicator, SineProduct, assemble_load, assemble_mass

BUMP_TRUNCATION = 400


@dataclass(frozen=True)
class EigenMode:
    """Dirichlet eigenfunction sin(n pi x1) sin(m pi x2) of the unit square."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError(f"mode numbers must be positive, got ({self.n}, {self.m})")

    @property
    def eigenvalue(self):
        return math.pi**2 * (self.n**2 + self.m**2)

    def __call__(self, x1, x2):
        return np.sin(self.n * np.pi * x1) * np.sin(self.m * np.pi * x2)

    def nodal(self, mesh):
        x1, x2 = mesh.interior_points()
        return self(x1, x2)

    def rayleigh_quotient(self, S, M, mesh):
        v = self.nodal(mesh)
        return float(v @ (S @ v)) / float(v @ (M @ v))


def bump_coefficient(n, m):
    """Sine coefficient of the indicator of [1/4, 3/4]^2."""
    cn = math.cos(n * math.pi / 4) - math.cos(3 * n * math.pi / 4)
    cm = math.cos(m * math.pi / 4) - math.cos(3 * m * math.pi / 4)
    return 4.0 / (n * m * math.pi**2) * cn * cm


def _bump_factors(L):
    # c_n = cos(n pi/4) - cos(3 n pi/4) vanishes for even n and is +-sqrt(2) for odd n
    n = np.arange(1, L + 1)
    c = np.cos(n * np.pi / 4) - np.cos(3 * n * np.pi / 4)
    c[n % 2 == 0] = 0.0
    return n, c


def bump_tail_bound(s, L=BUMP_TRUNCATION):
    """Upper bound on the L2 norm of the series terms with n > L or m > L.

    Uses |f_nm| = 8 / (n m pi^2) on odd pairs, ||phi_nm||^2 = 1/4 and
    lambda_nm > pi^2 L^2 on the tail.
    """
    odd = np.arange(1, L + 1, 2, dtype=float)
    partial = float(np.sum(1.0 / odd**2))
    total = math.pi**2 / 8.0
    tail_sq = max(total**2 - partial**2, 0.0)
    return math.sqrt(0.25 * 64.0 / math.pi**4 * (math.pi**2 * L**2) ** (-2.0 * s) * tail_sq)


def bump_series(s, x1, x2, L=BUMP_TRUNCATION):
    """Truncated series sum_{n,m<=L} f_nm lambda_nm^{-s} phi_nm on a tensor grid.

    ``x1`` and ``x2`` are 1D coordinate arrays; the result has shape
    ``(x2.size, x1.size)``.
    """
    n, c = _bump_factors(L)
    keep = c != 0.0
    n, c = n[keep], c[keep]
    lam = np.pi**2 * (n[:, None] ** 2 + n[None, :] ** 2)
    coef = (4.0 / np.pi**2) * np.outer(c / n, c / n) * lam ** (-s)
    Sx = np.sin(np.pi * np.outer(np.asarray(x1, dtype=float), n))
    Sy = np.sin(np.pi * np.outer(np.asarray(x2, dtype=float), n))
    # coef[i, j] pairs n_i in x1 with m_j in x2
    return Sy @ coef.T @ Sx.T


@dataclass(frozen=True)
class ManufacturedCase:
    name: str
    load: object
    modes: tuple = ()

    def exact(self, s, x1, x2):
        """Exact solution at scattered points."""
        _check_s(s)
        if self.modes:
            return sum(mode(x1, x2) * mode.eigenvalue ** (-s) for mode in self.modes)
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        return np.array([bump_series(s, [a], [b])[0, 0] for a, b in zip(x1, x2)])

    def exact_nodal(self, mesh, s):
        """Exact solution at the interior nodes, in DOF order."""
        _check_s(s)
        if self.modes:
            x1, x2 = mesh.interior_points()
            return self.exact(s, x1, x2)
        x = mesh.interior_coordinates
        return bump_series(s, x, x).ravel()

    def load_vector(self, mesh):
        return assemble_load(mesh, self.load)

    def tail_bound(self, s):
        return 0.0 if self.modes else bump_tail_bound(s)


def _check_s(s):
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order must lie in (0, 1), got {s}")


CASES = {
    "sine": ManufacturedCase("sine", SineProduct(1, 1), (EigenMode(1, 1),)),
    "mixed": ManufacturedCase("mixed", SineProduct(4, 10), (EigenMode(4, 10),)),
    "bump": ManufacturedCase("bump", Indicator(0.25, 0.75, 0.25, 0.75)),
}
_ALIASES = {"mixedmodes": "mixed", "squarebump": "bump"}


def get_case(name):
    key = str(name).lower()
    key = _ALIASES.get(key, key)
    if key not in CASES:
        raise KeyError(f"unknown case {name!r}; choose from {sorted(CASES)}")
    return CASES[key]


def exact_solution(case, s, mesh):
    return get_case(case).exact_nodal(mesh, s) if isinstance(case, str) else case.exact_nodal(mesh, s)


def l2_error(numeric, case, s, mesh, M=None):
    """Discrete L2 distance between a computed solution and the exact nodal values."""
    coeffs = getattr(numeric, "coefficients", numeric)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (mesh.n_dofs,):
        raise ValueError(f"solution has shape {coeffs.shape}, mesh needs ({mesh.n_dofs},)")
    if M is None:
        M = assemble_mass(mesh)
    return m_norm(M, coeffs - exact_solution(case, s, mesh))
