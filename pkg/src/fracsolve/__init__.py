"""Spectral fractional Laplacian solvers on the unit square.

Gauss-Laguerre quadrature of a partitioned resolvent integral, computable
quadrature error bounds, and certified reduced basis emulators.
"""

from .errors import (
    CertificateViolation,
    ConvergenceError,
    FracSolveError,
    ModelFormatError,
    NotPositiveDefiniteError,
    QuadratureOverflowError,
)
from .estimators import GaussLaguerreFractionalSolver, ReducedBasisFractionalSolver
from .kato import KatoConfig, solve_fractional_gq, solve_fractional_sq
from .mesh import build_mesh
from .quadrature import gauss_laguerre
from .testcases import get_case

__version__ = "0.1.0"

__all__ = [
    "CertificateViolation",
    "ConvergenceError",
    "FracSolveError",
    "GaussLaguerreFractionalSolver",
    "KatoConfig",
    "ModelFormatError",
    "NotPositiveDefiniteError",
    "QuadratureOverflowError",
    "ReducedBasisFractionalSolver",
    "build_mesh",
    "gauss_laguerre",
    "get_case",
    "solve_fractional_gq",
    "solve_fractional_sq",
]
