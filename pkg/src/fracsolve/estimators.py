"""Estimator-style front ends: configure, ``fit`` on a load, ``predict`` over orders s."""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .kato import KatoConfig, solve_fractional_gq, solve_fractional_sq
from .linalg import extremal_generalized_eigs
from .mesh import assemble_load, assemble_mass, assemble_stiffness, build_mesh
from .quadrature import sinc_rule
from .rbm import certificate_delta_N, rbm_solve_fractional, train_pair
from .testcases import get_case


def _orders(s):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.ndim != 1 or s.size == 0:
        raise ValueError("s must be a scalar or a nonempty 1D array")
    return s


class _TruthMixin:
    def _setup(self, X):
        self.mesh_ = build_mesh(self.level)
        self.stiffness_ = assemble_stiffness(self.mesh_)
        self.mass_ = assemble_mass(self.mesh_)
        if isinstance(X, str):
            self.load_ = get_case(X).load_vector(self.mesh_)
        elif isinstance(X, np.ndarray):
            load = np.asarray(X, dtype=float)
            if load.shape != (self.mesh_.n_dofs,):
                raise ValueError(f"load must have shape ({self.mesh_.n_dofs},), got {load.shape}")
            self.load_ = load
        else:
            self.load_ = assemble_load(self.mesh_, X)
        self.n_features_in_ = self.mesh_.n_dofs
        self.bounds_ = extremal_generalized_eigs(self.stiffness_, self.mass_)


class GaussLaguerreFractionalSolver(_TruthMixin, BaseEstimator):
    """Truth-space fractional solver.

    ``fit`` assembles the system for a load, which may be a case name, a
    load descriptor or an assembled load vector. ``predict`` returns one
    solution row per fractional order.
    """

    def __init__(self, level=5, quadrature="gq", delta=1e-4, M_minus=None, M_plus=None,
                 n_jobs=None):
        self.level = level
        self.quadrature = quadrature
        self.delta = delta
        self.M_minus = M_minus
        self.M_plus = M_plus
        self.n_jobs = n_jobs

    def fit(self, X, y=None):
        if self.quadrature not in ("gq", "sq"):
            raise ValueError(f"quadrature must be 'gq' or 'sq', got {self.quadrature!r}")
        self._setup(X)
        return self

    def solve(self, s):
        """Full :class:`FractionalSolution` for a single order."""
        check_is_fitted(self, "load_")
        if self.quadrature == "sq":
            rule = sinc_rule(float(s), self.mesh_.n_dofs)
            return solve_fractional_sq(rule, float(s), self.stiffness_, self.mass_, self.load_,
                                       n_jobs=self.n_jobs)
        config = KatoConfig(float(s), self.M_minus, self.M_plus, "gq", self.delta)
        return solve_fractional_gq(config, self.stiffness_, self.mass_, self.load_,
                                   bounds=self.bounds_, n_jobs=self.n_jobs)

    def predict(self, s):
        return np.vstack([self.solve(v).coefficients for v in _orders(s)])


class ReducedBasisFractionalSolver(_TruthMixin, BaseEstimator):
    """Reduced basis emulator of :class:`GaussLaguerreFractionalSolver`.

    ``fit`` trains one reduced model per half-line family. ``predict`` and
    ``certificate`` then cost nothing in the truth dimension beyond lifting.
    """

    def __init__(self, level=5, tol=1e-8, max_basis=100, delta=1e-4, M_minus=None,
                 M_plus=None, random_state=None, refine=False):
        self.level = level
        self.tol = tol
        self.max_basis = max_basis
        self.refine = refine
        self.delta = delta
        self.M_minus = M_minus
        self.M_plus = M_plus
        self.random_state = random_state

    def fit(self, X, y=None):
        self._setup(X)
        self.models_ = train_pair(self.stiffness_, self.mass_, self.load_, tol=self.tol,
                                  max_basis=self.max_basis, bounds=self.bounds_,
                                  level=self.level, seed=self.random_state,
                                  refine=self.refine)
        return self

    def _config(self, s):
        return KatoConfig(float(s), self.M_minus, self.M_plus, "gq", self.delta)

    def solve(self, s):
        check_is_fitted(self, "models_")
        return rbm_solve_fractional(self.models_, self._config(s))

    def predict(self, s):
        return np.vstack([self.solve(v).coefficients for v in _orders(s)])

    def certificate(self, s):
        """Error certificate for each order in ``s``."""
        check_is_fitted(self, "models_")
        return np.array([certificate_delta_N(self.models_, self._config(v)) for v in _orders(s)])
