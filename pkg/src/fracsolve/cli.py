"""Command-line driver: ``fracsolve <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 numerical failure, 4 certificate
violation. FRACSOLVE_THREADS caps the number of worker threads.
"""

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time

import numpy as np

from .errors import CertificateViolation, FracSolveError
from .kato import (
    S_MAX,
    S_MIN,
    KatoConfig,
    solve_fractional_gq,
    solve_fractional_sq,
    split_total,
)
from .linalg import extremal_generalized_eigs, m_norm
from .mesh import assemble_mass, assemble_stiffness, build_mesh
from .quaderror import M_tilde, SpectralIntervals, error_surface
from .quadrature import sinc_rule, sinc_rule_for_size
from .rbm import load_model, rbm_solve_fractional, save_model, train_pair
from .testcases import CASES, get_case, l2_error

CSV_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_CERTIFICATE = 0, 2, 3, 4

logger = logging.getLogger("fracsolve")


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ helpers


def _order(text):
    try:
        s = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not S_MIN <= s <= S_MAX:
        raise argparse.ArgumentTypeError(f"s must lie in [{S_MIN}, {S_MAX}], got {s}")
    return s


def _positive(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _rule_size(text):
    if text == "auto":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--M takes 'auto' or an integer, got {text!r}") from None
    if value < 3:
        raise argparse.ArgumentTypeError(f"--M must be at least 3, got {value}")
    return value


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path, command, columns, rows):
    """CSV with a versioned schema comment on the first line."""
    lines = [f"# fracsolve {command} csv v{CSV_VERSION}", ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


class _Problem:
    """Assembled truth system for one case and level, with timings."""

    def __init__(self, case, level):
        t0 = time.perf_counter()
        self.case = get_case(case)
        self.mesh = build_mesh(level)
        self.S = assemble_stiffness(self.mesh)
        self.M = assemble_mass(self.mesh)
        self.f = self.case.load_vector(self.mesh)
        self.assembly_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        self.bounds = extremal_generalized_eigs(self.S, self.M)
        self.spectral_time = time.perf_counter() - t0
        self.intervals = SpectralIntervals.from_bounds(self.bounds)

    def gq(self, s, total=None, delta=1e-4, n_jobs=None):
        if total is None:
            config = KatoConfig(s, quadrature="gq", delta=delta)
        else:
            ref_minus, ref_plus, _ = M_tilde(delta, s, self.intervals)
            config = KatoConfig(s, *split_total(total, ref_minus, ref_plus), "gq", delta)
        return solve_fractional_gq(config, self.S, self.M, self.f, bounds=self.bounds,
                                   n_jobs=n_jobs)

    def sq(self, s, total=None, n_jobs=None):
        rule = sinc_rule(s, self.mesh.n_dofs) if total is None else sinc_rule_for_size(s, total)
        return solve_fractional_sq(rule, s, self.S, self.M, self.f, n_jobs=n_jobs)

    def error(self, solution, s):
        return l2_error(solution, self.case, s, self.mesh, self.M)


def _model_paths(directory):
    return os.path.join(directory, "model_minus.rbm"), os.path.join(directory, "model_plus.rbm")


def _load_models(directory, truth_dim=None):
    minus, plus = _model_paths(directory)
    return {"-": load_model(minus, truth_dim), "+": load_model(plus, truth_dim)}


# ------------------------------------------------------------------ commands


def cmd_solve(args):
    if args.method == "rbm" and not args.model:
        raise UsageError("--method rbm needs --model DIR from 'fracsolve rbm-train'")
    if args.method != "rbm" and args.model:
        raise UsageError("--model only applies to --method rbm")
    problem = _Problem(args.case, args.level)
    if args.method == "gq":
        sol = problem.gq(args.s, args.M, args.delta, args.threads)
    elif args.method == "sq":
        sol = problem.sq(args.s, args.M, args.threads)
    else:
        models = _load_models(args.model, problem.mesh.n_dofs)
        config = KatoConfig(args.s, quadrature="gq", delta=args.delta)
        if args.M is not None:
            ref_minus, ref_plus, _ = M_tilde(args.delta, args.s, problem.intervals)
            config = KatoConfig(args.s, *split_total(args.M, ref_minus, ref_plus), "gq", args.delta)
        sol = rbm_solve_fractional(models, config)

    error = problem.error(sol, args.s)
    norm = m_norm(problem.M, sol.coefficients)
    report = {
        "case": problem.case.name,
        "level": args.level,
        "s": args.s,
        "method": sol.method,
        "M_minus": sol.M_minus,
        "M_plus": sol.M_plus,
        "solves": sol.n_solves,
        "l2_error": error,
        "solution_norm": norm,
        "stability_bound": sol.report.stability_bound,
        "quadrature_bound": sol.report.quadrature_bound,
        "rbm_certificate": sol.report.rbm_certificate,
        "tail_bound": problem.case.tail_bound(args.s),
        "time_assembly": problem.assembly_time,
        "time_spectral": problem.spectral_time,
    }
    for key, value in sol.timings.items():
        report[f"time_{key}"] = value
    if sol.n_solves:
        report["time_per_solve"] = sol.timings.get("solves", math.nan) / sol.n_solves
    _atomic_write(os.path.join(args.out, "solution.txt"), sol.to_text(args.level))
    _atomic_write(os.path.join(args.out, "report.txt"),
                  "".join(f"{k} = {_fmt(v)}\n" for k, v in report.items()))
    print(f"{sol.method} s={args.s} level={args.level} M-={sol.M_minus} M+={sol.M_plus} "
          f"l2_error={error:.6e}")
    if not math.isnan(sol.report.stability_bound) and norm > sol.report.stability_bound:
        raise CertificateViolation(
            f"solution norm {norm:.6e} exceeds stability bound {sol.report.stability_bound:.6e}"
        )
    return EXIT_OK


def cmd_hconv(args):
    rows = []
    for level in args.levels:
        problem = _Problem("sine", level)
        gq = problem.gq(args.s, delta=args.delta, n_jobs=args.threads)
        rows.append((level, problem.mesh.h, "gq", gq.M_minus, gq.M_plus, problem.error(gq, args.s)))
        sq = problem.sq(args.s, n_jobs=args.threads)
        rows.append((level, problem.mesh.h, "sq", sq.M_minus, sq.M_plus, problem.error(sq, args.s)))
        print(f"level {level}: gq {rows[-2][-1]:.6e}  sq {rows[-1][-1]:.6e}")
    write_csv(args.out, "hconv", ("level", "h", "method", "M_minus", "M_plus", "l2_error"), rows)
    return EXIT_OK


def cmd_quadstudy(args):
    problem = _Problem(args.case, args.level)
    rows = []
    for s in args.s:
        reference = problem.gq(s, delta=args.reference_delta, n_jobs=args.threads)
        for total in args.M:
            for method in ("gq", "sq"):
                if method == "gq":
                    sol = problem.gq(s, total, args.split_delta, args.threads)
                else:
                    sol = problem.sq(s, total, args.threads)
                quad = m_norm(problem.M, sol.coefficients - reference.coefficients)
                rows.append((total, method, s, problem.error(sol, s), quad))
        print(f"s={s}: done")
    write_csv(args.out, "quadstudy", ("M", "method", "s", "l2_error", "quadrature_error"), rows)
    return EXIT_OK


def cmd_gsurface(args):
    if args.level is None:
        intervals = SpectralIntervals(K2=args.K2, C2=args.C2)
    else:
        intervals = _Problem("sine", args.level).intervals
    M_values = list(range(args.M_min, args.M_max + 1, args.M_step))
    rows = error_surface(M_values, args.s, intervals)
    write_csv(os.path.join(args.out, "gsurface.csv"), "gsurface", ("M", "s", "G_minus", "G_plus"),
              rows)
    table = []
    for delta in args.delta:
        for s in args.s:
            m_minus, m_plus, _ = M_tilde(delta, s, intervals)
            table.append((delta, s, m_minus, m_plus))
    write_csv(os.path.join(args.out, "mtilde.csv"), "mtilde",
              ("delta", "s", "M_minus", "M_plus"), table)
    return EXIT_OK


def cmd_rbm_train(args):
    problem = _Problem(args.case, args.level)
    t0 = time.perf_counter()
    models = train_pair(problem.S, problem.M, problem.f, tol=args.tol, max_basis=args.max_basis,
                        bounds=problem.bounds, level=args.level, seed=args.seed,
                        refine=args.refine)
    offline = time.perf_counter() - t0 + problem.spectral_time
    os.makedirs(args.out, exist_ok=True)
    for sigma, path in zip(("-", "+"), _model_paths(args.out)):
        save_model(models[sigma], path)
    rows = [(sigma, n, sup) for sigma in ("-", "+") for n, sup in models[sigma].history]
    write_csv(os.path.join(args.out, "history.csv"), "rbm-train", ("sigma", "n", "sup_delta"),
              rows)
    meta = {"case": problem.case.name, "level": args.level, "tol": args.tol,
            "offline_time": offline,
            "N": {sigma: models[sigma].size for sigma in ("-", "+")},
            "stagnated": {sigma: models[sigma].stagnated for sigma in ("-", "+")}}
    _atomic_write(os.path.join(args.out, "training.json"), json.dumps(meta, indent=2) + "\n")
    print(f"trained N-={models['-'].size} N+={models['+'].size} in {offline:.2f}s")
    return EXIT_OK


def cmd_rbm_solve(args):
    problem = _Problem(args.case, args.level)
    models = _load_models(args.model, problem.mesh.n_dofs)
    rows = []
    violated = []
    for s in args.s:
        config = KatoConfig(s, quadrature="gq", delta=args.delta)
        sol = rbm_solve_fractional(models, config)
        row = [s, sol.M_minus, sol.M_plus, sol.report.rbm_certificate,
               problem.error(sol, s), sol.timings["online"]]
        if args.verify:
            truth = problem.gq(s, delta=args.delta, n_jobs=args.threads)
            gap = m_norm(problem.M, truth.coefficients - sol.coefficients)
            row.append(gap)
            if gap > sol.report.rbm_certificate:
                violated.append(s)
        rows.append(tuple(row))
    columns = ["s", "M_minus", "M_plus", "certificate", "l2_error", "online_time"]
    if args.verify:
        columns.append("truth_gap")
    write_csv(args.out, "rbm-solve", columns, rows)
    if violated:
        raise CertificateViolation(f"certificate below the truth gap at s = {violated}")
    return EXIT_OK


def cmd_timing(args):
    problem = _Problem(args.case, args.level)
    t0 = time.perf_counter()
    models = train_pair(problem.S, problem.M, problem.f, tol=args.tol, bounds=problem.bounds,
                        level=args.level)
    offline = time.perf_counter() - t0 + problem.spectral_time

    rng = np.random.default_rng(args.seed)
    orders = rng.uniform(args.s_min, args.s_max, args.queries)
    gq_times = []
    for s in orders[: args.gq_samples]:
        t0 = time.perf_counter()
        problem.gq(float(s), delta=args.delta, n_jobs=args.threads)
        gq_times.append(time.perf_counter() - t0)
    gq_mean = float(np.mean(gq_times))

    # both methods pay for the spectral bounds once
    rows = []
    gq_total, rbm_total = problem.spectral_time, offline
    for q, s in enumerate(orders, start=1):
        t0 = time.perf_counter()
        rbm_solve_fractional(models, KatoConfig(float(s), quadrature="gq", delta=args.delta))
        rbm_total += time.perf_counter() - t0
        measured = q <= len(gq_times)
        gq_total += gq_times[q - 1] if measured else gq_mean
        rows.append((q, float(s), gq_total, rbm_total, int(measured)))
    write_csv(args.out, "timing", ("query", "s", "gq_cumulative", "rbm_cumulative",
                                   "gq_measured"), rows)
    print(f"{args.queries} queries: gq {gq_total:.2f}s  rbm {rbm_total:.2f}s "
          f"(offline {offline:.2f}s)")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="fracsolve", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for independent solves (-1: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)
    cases = sorted(CASES)

    p = sub.add_parser("solve", help="one fractional solve with error report")
    p.add_argument("--case", choices=cases, default="sine")
    p.add_argument("--s", type=_order, required=True)
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--method", choices=("gq", "sq", "rbm"), default="gq")
    p.add_argument("--M", type=_rule_size, default=None, metavar="auto|INT",
                   help="total quadrature nodes (default: auto)")
    p.add_argument("--delta", type=_positive, default=1e-4)
    p.add_argument("--model", default=None, help="directory written by rbm-train")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("hconv", help="mesh convergence of GQ and SQ on the sine case")
    p.add_argument("--s", type=_order, default=0.2)
    p.add_argument("--levels", type=int, nargs="+", default=[3, 4, 5, 6, 7])
    p.add_argument("--delta", type=_positive, default=1e-8)
    p.add_argument("--out", default="hconv.csv")
    p.set_defaults(func=cmd_hconv)

    p = sub.add_parser("quadstudy", help="error against total quadrature nodes")
    p.add_argument("--case", choices=cases, default="sine")
    p.add_argument("--level", type=int, default=5)
    p.add_argument("--s", type=_order, nargs="+", default=[0.2, 0.5])
    p.add_argument("--M", type=int, nargs="+", default=list(range(10, 161, 10)))
    p.add_argument("--reference-delta", type=_positive, default=1e-12)
    p.add_argument("--split-delta", type=_positive, default=1e-8,
                   help="tolerance whose certified sizes set the GQ node split")
    p.add_argument("--out", default="quadstudy.csv")
    p.set_defaults(func=cmd_quadstudy)

    p = sub.add_parser("gsurface", help="quadrature error functionals and certified sizes")
    p.add_argument("--level", type=int, default=None,
                   help="take the spectral intervals from this mesh instead of --K2/--C2")
    p.add_argument("--K2", type=_positive, default=1e-6)
    p.add_argument("--C2", type=_positive, default=2.0)
    p.add_argument("--s", type=_order, nargs="+", default=[0.01, 0.02, 0.05, 0.1, 0.5, 0.9])
    p.add_argument("--delta", type=_positive, nargs="+", default=[1e-2, 1e-4, 1e-6])
    p.add_argument("--M-min", type=int, default=1)
    p.add_argument("--M-max", type=int, default=100)
    p.add_argument("--M-step", type=int, default=1)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_gsurface)

    p = sub.add_parser("rbm-train", help="train reduced models for both families")
    p.add_argument("--case", choices=cases, default="sine")
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--tol", type=_positive, default=1e-7)
    p.add_argument("--max-basis", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--refine", action="store_true",
                   help="densify the training grid next to each greedy pick")
    p.add_argument("--out", default="rbm-model")
    p.set_defaults(func=cmd_rbm_train)

    p = sub.add_parser("rbm-solve", help="online solves with certificates")
    p.add_argument("--model", required=True)
    p.add_argument("--case", choices=cases, default="sine")
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--s", type=_order, nargs="+", default=[0.2, 0.5, 0.8])
    p.add_argument("--delta", type=_positive, default=1e-4)
    p.add_argument("--verify", action="store_true",
                   help="compare with truth solves and fail on a violated certificate")
    p.add_argument("--out", default="rbm-solve.csv")
    p.set_defaults(func=cmd_rbm_solve)

    p = sub.add_parser("timing", help="cumulative cost of repeated queries, GQ against RBM")
    p.add_argument("--case", choices=cases, default="sine")
    p.add_argument("--level", type=int, default=7)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--gq-samples", type=int, default=3,
                   help="GQ queries actually run; the rest are charged their mean time")
    p.add_argument("--s-min", type=_order, default=0.1)
    p.add_argument("--s-max", type=_order, default=0.9)
    p.add_argument("--delta", type=_positive, default=1e-4)
    p.add_argument("--tol", type=_positive, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="timing.csv")
    p.set_defaults(func=cmd_timing)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, KeyError) as exc:
        parser.print_usage(sys.stderr)
        print(f"fracsolve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CertificateViolation as exc:
        print(f"fracsolve: certificate violated: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except FracSolveError as exc:
        print(f"fracsolve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        parser.print_usage(sys.stderr)
        print(f"fracsolve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
