"""Reduced basis emulators for the two shifted families and their certificates.

For sigma = "-" the truth problem is (S + z M) w = f, for sigma = "+" it is
(z S + M) w = f, with z = exp(-y) in (0, 1]. Both are affine in z, so a
Galerkin projection onto an M-orthonormal basis U gives the n x n systems
(B + z C) c = g or (z B + C) c = g with B = U^T S U, C = U^T M U, g = U^T f.
"""

import json
import logging
import math
import os
import struct
import tempfile
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, ModelFormatError
from .kato import ErrorReport, FractionalSolution, _shifted, gq_terms
from .linalg import TOLERANCES, extremal_generalized_eigs, factorize, m_inverse_norm

logger = logging.getLogger(__name__)

GRID_SIZE = 128
MAX_BASIS = 100
COND_LIMIT = 1e14
REJECT_RATIO = 1e-12
STAGNATION_STEPS = 5

MODEL_MAGIC = b"FRACRBM\0"
MODEL_VERSION = 1
_ARRAY_FIELDS = ("snapshots", "U", "B", "C", "g", "R_S", "R_M", "q_f")


def training_grid(size=GRID_SIZE):
    """y = -log z for z = i / size, i = 1..size, sorted increasingly in y."""
    z = np.arange(size, 0, -1) / size
    return -np.log(z)


def _check_sigma(sigma):
    if sigma not in ("-", "+"):
        raise ValueError(f"sigma must be '-' or '+', got {sigma!r}")


@dataclass
class RbmModel:
    """Reduced model for one family.

    The residual of a reduced solution lies in f + span[S U, M U]. With Q an
    orthonormal basis of that span the squared residual splits into
    ``perp_f2 = |f - Q Q^T f|^2`` and a 2n-dimensional part computed from
    ``R_S = Q^T S U``, ``R_M = Q^T M U`` and ``q_f = Q^T f``.
    """

    sigma: str
    truth_dim: int
    level: int
    lambda_min_SM: float
    lambda_max_SM: float
    lambda_min_M: float
    f_norm: float
    f_norm_Minv: float
    snapshots: np.ndarray = None
    U: np.ndarray = None
    B: np.ndarray = None
    C: np.ndarray = None
    g: np.ndarray = None
    R_S: np.ndarray = None
    R_M: np.ndarray = None
    q_f: np.ndarray = None
    perp_f2: float = 0.0
    history: list = field(default_factory=list)
    stagnated: bool = False
    rejected: list = field(default_factory=list)

    def __post_init__(self):
        _check_sigma(self.sigma)
        n = self.truth_dim
        for name, shape in (("snapshots", (0,)), ("U", (n, 0)), ("B", (0, 0)), ("C", (0, 0)),
                            ("g", (0,)), ("R_S", (0, 0)), ("R_M", (0, 0)), ("q_f", (0,))):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(shape))
        if self.perp_f2 == 0.0 and self.U.shape[1] == 0:
            self.perp_f2 = self.f_norm**2
        self._spectrum = None

    @property
    def size(self):
        return self.U.shape[1]

    @property
    def C2(self):
        return 1.0 / self.lambda_min_SM

    @property
    def K2(self):
        return 1.0 / self.lambda_max_SM

    def _pencil_spectrum(self):
        # eigenvalues of (B, C): the reduced operator for shift z has eigenvalues
        # mu + z ("-") or z mu + 1 ("+") in the C-metric
        if self._spectrum is None:
            self._spectrum = sla.eigh(self.B, self.C, eigvals_only=True) if self.size else np.zeros(0)
        return self._spectrum

    def reduced_matrix(self, y):
        z = math.exp(-y)
        return self.B + z * self.C if self.sigma == "-" else z * self.B + self.C

    def condition_number(self, y):
        mu = self._pencil_spectrum()
        if mu.size == 0:
            return 1.0
        z = math.exp(-y)
        vals = mu + z if self.sigma == "-" else z * mu + 1.0
        return float(vals.max() / vals.min() * np.linalg.cond(self.C))


@dataclass
class ReducedSolution:
    coefficients: np.ndarray
    y: float
    estimator: float


def _check_y(y):
    if not y >= 0.0:
        raise ValueError(f"y must be nonnegative, got {y}")


def reduced_solve(model, y):
    """Reduced coefficients and estimator at parameter ``y``."""
    _check_y(y)
    if model.size == 0:
        c = np.zeros(0)
    else:
        cond = model.condition_number(y)
        if cond > COND_LIMIT:
            raise ConvergenceError(
                f"reduced matrix condition number {cond:.3e} exceeds {COND_LIMIT:.0e}", best=cond
            )
        c = sla.solve(model.reduced_matrix(y), model.g, assume_a="pos")
    return ReducedSolution(c, float(y), estimator(model, y, c))


def residual_norm(model, y, c):
    """Euclidean norm of f - A(y) U c from the offline data only."""
    if model.size == 0:
        return math.sqrt(model.perp_f2)
    z = math.exp(-y)
    if model.sigma == "-":
        image = model.R_S @ c + z * (model.R_M @ c)
    else:
        image = z * (model.R_S @ c) + model.R_M @ c
    projected = model.q_f - image
    return math.sqrt(model.perp_f2 + float(projected @ projected))


def residual_norm_direct(model, S, M, f, y, c):
    """The same residual norm formed in truth space."""
    w = model.U @ c if model.size else np.zeros(model.truth_dim)
    return float(np.linalg.norm(f - _shifted(S, M, model.sigma, y) @ w))


def estimator_from_residual(model, y, rnorm):
    z = math.exp(-y)
    C2 = model.C2
    denom = (C2 * z + 1.0) if model.sigma == "-" else (z + C2)
    return C2 * rnorm / (math.sqrt(model.lambda_min_M) * denom)


def estimator(model, y, c):
    """Upper bound on the M-norm error of the lifted reduced solution at ``y``."""
    return estimator_from_residual(model, y, residual_norm(model, y, c))


def lift(model, c):
    return model.U @ c


def _estimates(model, ys):
    out = np.empty(len(ys))
    for i, y in enumerate(ys):
        out[i] = reduced_solve(model, y).estimator
    return out


def sup_estimator(model, extra_y=(), n_points=1025):
    """max over y >= 0 of the estimator, sampled on a dense z grid.

    The grid includes z = 0 (y = infinity, evaluated through the limit
    problem) and any ``extra_y``.
    """
    z = np.linspace(0.0, 1.0, n_points)
    ys = [-math.log(v) for v in z[1:]] + [float(y) for y in extra_y]
    best = float(np.max(_estimates(model, ys))) if ys else 0.0
    return max(best, _estimate_at_infinity(model))


def _estimate_at_infinity(model):
    # z = 0: "-" reduces to S w = f and "+" to M w = f
    if model.size == 0:
        rnorm = math.sqrt(model.perp_f2)
    else:
        A = model.B if model.sigma == "-" else model.C
        c = sla.solve(A, model.g, assume_a="pos")
        image = model.R_S @ c if model.sigma == "-" else model.R_M @ c
        rnorm = math.sqrt(model.perp_f2 + float((model.q_f - image) @ (model.q_f - image)))
    C2 = model.C2
    denom = 1.0 if model.sigma == "-" else C2
    return C2 * rnorm / (math.sqrt(model.lambda_min_M) * denom)


def _m_orthogonalize(U, MU, w, M):
    """Modified Gram-Schmidt against the columns of U in the M inner product, twice."""
    original = math.sqrt(max(float(w @ (M @ w)), 0.0))
    v = w.copy()
    for _ in range(2):
        for k in range(U.shape[1]):
            v -= float(MU[:, k] @ v) * U[:, k]
    norm = math.sqrt(max(float(v @ (M @ v)), 0.0))
    if original == 0.0 or norm < REJECT_RATIO * original:
        return None
    return v / norm


def _rebuild_offline(model, S, M, f):
    U = model.U
    SU = S @ U
    MU = M @ U
    model.B = U.T @ SU
    model.B = 0.5 * (model.B + model.B.T)
    model.C = U.T @ MU
    model.C = 0.5 * (model.C + model.C.T)
    model.g = U.T @ f
    Q, _ = np.linalg.qr(np.hstack([SU, MU]))
    model.R_S = Q.T @ SU
    model.R_M = Q.T @ MU
    model.q_f = Q.T @ f
    perp = f - Q @ model.q_f
    model.perp_f2 = float(perp @ perp)
    model._spectrum = None


def _empty_model(sigma, S, M, f, bounds, level, tol):
    M_factor = factorize(M, tol)
    return RbmModel(
        sigma=sigma,
        truth_dim=S.shape[0],
        level=-1 if level is None else int(level),
        lambda_min_SM=bounds.lambda_min_SM,
        lambda_max_SM=bounds.lambda_max_SM,
        lambda_min_M=bounds.lambda_min_M,
        f_norm=float(np.linalg.norm(f)),
        f_norm_Minv=m_inverse_norm(M, f, M_factor),
    )


def _refine_around(grid, pick):
    """Dyadic midpoints in z = exp(-y) on both sides of ``grid[pick]``.

    ``grid`` is sorted increasingly in y; past the last point the midpoint
    is taken towards z = 0.
    """
    z = np.exp(-grid)
    new = []
    if pick > 0:
        new.append(0.5 * (z[pick - 1] + z[pick]))
    new.append(0.5 * (z[pick] + z[pick + 1]) if pick + 1 < grid.size else 0.5 * z[pick])
    return -np.log(np.array(new))


def greedy_train(sigma, S, M, f, tol=1e-8, grid=None, max_basis=MAX_BASIS, bounds=None,
                 level=None, seed=None, solver_tol=TOLERANCES, refine=False):
    """Weak greedy training of one family.

    The first parameter is the median grid point, or a random grid point
    when ``seed`` is given. Each step adds the truth solution at the grid
    argmax of the estimator. Training ends when the grid maximum is at most
    ``tol``, at ``max_basis`` snapshots, or when the maximum has not
    decreased for five steps (``model.stagnated`` is then set).

    With ``refine`` the grid gains the two z-midpoints next to every pick,
    which densifies it where the estimator peaks, including towards z = 0.
    """
    _check_sigma(sigma)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    f = np.asarray(f, dtype=float)
    grid = training_grid() if grid is None else np.sort(np.asarray(grid, dtype=float))
    if bounds is None:
        bounds = extremal_generalized_eigs(S, M, solver_tol)
    model = _empty_model(sigma, S, M, f, bounds, level, solver_tol)
    active = np.ones(grid.size, dtype=bool)

    est = _estimates(model, grid)
    model.history.append((0, float(est.max())))
    if seed is None:
        pick = grid.size // 2
    else:
        pick = int(np.random.default_rng(seed).integers(grid.size))

    best = est.max()
    since_best = 0
    t0 = time.perf_counter()
    while True:
        y = float(grid[pick])
        w = factorize(_shifted(S, M, sigma, y), solver_tol).solve(f)
        MU = M @ model.U
        v = _m_orthogonalize(model.U, MU, w, M)
        active[pick] = False
        if refine and np.isfinite(y):
            extra = _refine_around(grid, pick)
            extra = extra[~np.isin(extra, grid)]
            if extra.size:
                grid = np.concatenate([grid, extra])
                active = np.concatenate([active, np.ones(extra.size, dtype=bool)])
                est = np.concatenate([est, _estimates(model, extra)])
                order = np.argsort(grid, kind="stable")
                grid, active, est = grid[order], active[order], est[order]
        if v is None:
            model.rejected.append(y)
            logger.info("rbm %s: snapshot at y=%.6g rejected as dependent", sigma, y)
        else:
            model.U = np.column_stack([model.U, v])
            model.snapshots = np.append(model.snapshots, y)
            _rebuild_offline(model, S, M, f)
            est = _estimates(model, grid)
            sup = float(est.max())
            model.history.append((model.size, sup))
            logger.debug("rbm %s: n=%d sup=%.3e", sigma, model.size, sup)
            if sup <= tol:
                break
            if sup < best * (1.0 - 1e-12):
                best, since_best = sup, 0
            else:
                since_best += 1
                if since_best >= STAGNATION_STEPS:
                    model.stagnated = True
                    warnings.warn(
                        f"rbm {sigma}: estimator stagnated at {sup:.3e} with n={model.size}",
                        RuntimeWarning, stacklevel=2,
                    )
                    break
        if model.size >= max_basis or not active.any():
            break
        masked = np.where(active, est, -np.inf)
        pick = int(np.argmax(masked))
    model.train_time = time.perf_counter() - t0
    return model


def train_pair(S, M, f, tol=1e-8, max_basis=MAX_BASIS, bounds=None, level=None, seed=None,
               refine=False):
    """Train both families sharing one set of spectral bounds."""
    if bounds is None:
        bounds = extremal_generalized_eigs(S, M)
    return {
        sigma: greedy_train(sigma, S, M, f, tol=tol, max_basis=max_basis, bounds=bounds,
                            level=level, seed=seed, refine=refine)
        for sigma in ("-", "+")
    }


def _rule_terms(models, config):
    from .kato import resolve_rule_sizes
    from .quaderror import SpectralIntervals

    model = models["-"]
    intervals = SpectralIntervals(K2=model.K2, C2=model.C2)
    M_minus, M_plus = resolve_rule_sizes(config, intervals)
    return intervals, M_minus, M_plus, gq_terms(config, M_minus, M_plus)


def certificate_delta_N(models, config):
    """sum_sigma beta0(s_sigma) sum_j tau_j Delta_sigma(y_j / s_sigma)."""
    _, _, _, terms = _rule_terms(models, config)
    return float(sum(weight * reduced_solve(models[sigma], y).estimator
                     for sigma, weight, y in terms))


def certificate_cap(models, extra_y=()):
    """(4/pi) max_sigma sup_y Delta_sigma(y)."""
    return 4.0 / math.pi * max(sup_estimator(m, extra_y) for m in models.values())


def rbm_solve_fractional(models, config):
    """Fractional solve with reduced emulators in place of the truth solves."""
    from .quaderror import G_minus, G_plus

    t0 = time.perf_counter()
    intervals, M_minus, M_plus, terms = _rule_terms(models, config)
    t_rules = time.perf_counter() - t0

    t0 = time.perf_counter()
    coeffs = {sigma: np.zeros(models[sigma].size) for sigma in ("-", "+")}
    delta = 0.0
    for sigma, weight, y in terms:
        red = reduced_solve(models[sigma], y)
        if red.coefficients.size:
            coeffs[sigma] += weight * red.coefficients
        delta += weight * red.estimator
    u = lift(models["-"], coeffs["-"]) + lift(models["+"], coeffs["+"])
    t_online = time.perf_counter() - t0

    ref = models["-"]
    g_minus = G_minus(M_minus, config.s, intervals)
    g_plus = G_plus(M_plus, config.s, intervals)
    C2_tilde = max(1.0, ref.C2)
    report = ErrorReport(
        s=config.s,
        f_norm=ref.f_norm_Minv,
        C2_tilde=C2_tilde,
        stability_bound=4.0 * C2_tilde / math.pi * ref.f_norm_Minv,
        G_minus=g_minus,
        G_plus=g_plus,
        quadrature_bound=C2_tilde * ref.f_norm_Minv * (g_minus + g_plus),
        rbm_certificate=delta,
    )
    timings = {"rules": t_rules, "online": t_online, "total": t_rules + t_online}
    return FractionalSolution(u, report, "rbm", M_minus, M_plus, 0, timings)


# ------------------------------------------------------------------ files


def _header(model):
    return {
        "version": MODEL_VERSION,
        "sigma": model.sigma,
        "truth_dim": int(model.truth_dim),
        "level": int(model.level),
        "N": int(model.size),
        "constants": {
            "lambda_min_SM": model.lambda_min_SM,
            "lambda_max_SM": model.lambda_max_SM,
            "lambda_min_M": model.lambda_min_M,
            "f_norm": model.f_norm,
            "f_norm_Minv": model.f_norm_Minv,
            "perp_f2": model.perp_f2,
        },
        "stagnated": bool(model.stagnated),
        "history": [[int(n), float(v)] for n, v in model.history],
        "rejected": [float(y) for y in model.rejected],
        "arrays": {name: list(np.shape(getattr(model, name))) for name in _ARRAY_FIELDS},
    }


def save_model(model, path):
    """Write ``model`` atomically: magic, header length, JSON header, little-endian arrays."""
    header = json.dumps(_header(model)).encode("utf-8")
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".rbm-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MODEL_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for name in _ARRAY_FIELDS:
                fh.write(np.ascontiguousarray(getattr(model, name), dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path, truth_dim=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a reduced basis model file")
    offset = len(MODEL_MAGIC)
    if len(data) < offset + 4:
        raise ModelFormatError(f"{path}: truncated header")
    (length,) = struct.unpack("<I", data[offset:offset + 4])
    offset += 4
    try:
        header = json.loads(data[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: corrupt header") from exc
    offset += length
    if header.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"{path}: model version {header.get('version')} unsupported (need {MODEL_VERSION})"
        )
    if truth_dim is not None and header["truth_dim"] != truth_dim:
        raise ModelFormatError(
            f"{path}: model truth dimension {header['truth_dim']} does not match {truth_dim}"
        )
    arrays = {}
    for name in _ARRAY_FIELDS:
        shape = tuple(header["arrays"][name])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if len(data) < offset + nbytes:
            raise ModelFormatError(f"{path}: truncated array {name}")
        arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise ModelFormatError(f"{path}: {len(data) - offset} trailing bytes")
    const = header["constants"]
    return RbmModel(
        sigma=header["sigma"],
        truth_dim=header["truth_dim"],
        level=header["level"],
        lambda_min_SM=const["lambda_min_SM"],
        lambda_max_SM=const["lambda_max_SM"],
        lambda_min_M=const["lambda_min_M"],
        f_norm=const["f_norm"],
        f_norm_Minv=const["f_norm_Minv"],
        perp_f2=const["perp_f2"],
        history=[tuple(h) for h in header["history"]],
        stagnated=header["stagnated"],
        rejected=header["rejected"],
        **arrays,
    )
