"""Command-line front end.

Every subcommand reads a system (``--input FILE`` or ``--fixture NAME``),
runs one analysis and writes JSON/CSV files into ``--out``.  Files are only
written once the computation has succeeded.  Exit codes: 0 success,
2 invalid input, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .errors import NumericalError, ValidationError
from .lyapunov import (lyapunov_qnorm_bound, solve_lyapunov_direct,
                       solve_lyapunov_iterative)
from .measures import (QMeasureSpec, measure_report, s01_measure, sqw_measure_pow,
                       weighted_line_sums)
from .riccati import solve_care
from .sparsify import (hinf_resolvent_peak, near_optimal_q,
                       stabilizing_truncation_length, truncation_sweep)
from .stability import (fit_semigroup_bound, log_semigroup_qnorm_bound, matrix_exponential,
                        semigroup_bound_params)
from .systems import build_named_system, fit_decay_envelope, load_system
from .weights import WeightFunction

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


# -- output helpers ----------------------------------------------------------

def _clean(obj):
    """Replace non-finite floats so the JSON stays standard."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _decay_profile(M):
    """Largest ``|m_ij|`` at each distance ``|i - j|``."""
    M = np.abs(np.asarray(M))
    n = M.shape[0]
    return [max(np.abs(np.diagonal(M, k)).max(), np.abs(np.diagonal(M, -k)).max())
            for k in range(n)]


def _write_outputs(out_dir: Path, files: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, text in files.items():
            path = out_dir / name
            path.write_text(text)
            written.append(path)
    except OSError:
        for path in written:
            path.unlink(missing_ok=True)
        raise


# -- argument handling -------------------------------------------------------

def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def _add_system_args(p):
    src = p.add_argument_group("system")
    src.add_argument("--input", type=Path, help="system file (decaylab-system/1)")
    src.add_argument("--fixture", choices=["diffusion", "random-subexp-A", "scalar-embed"],
                     help="build a named fixture instead of reading a file")
    src.add_argument("--N", type=int, default=50, help="window radius for fixtures (default 50)")
    src.add_argument("--mu", type=float, default=0.1, help="diffusion damping (default 0.1)")
    src.add_argument("--sigma", type=float, default=1.0, help="ensemble sigma (default 1)")
    src.add_argument("--delta", type=float, default=0.5, help="ensemble delta (default 0.5)")
    src.add_argument("--seed", type=int, default=0, help="ensemble seed (default 0)")
    src.add_argument("--a", type=float, default=-1.0, help="scalar-embed state coefficient")


def _add_measure_args(p, q_default=1.0, weight_default="subexp:1:0.5"):
    p.add_argument("--q", type=float, default=q_default,
                   help=f"measure exponent (default {q_default})")
    p.add_argument("--weight", default=weight_default,
                   help=f"subexp:SIGMA:DELTA, poly:ALPHA:SIGMA or trivial (default {weight_default})")


def _system(args):
    if (args.input is None) == (args.fixture is None):
        raise ValidationError("give exactly one of --input and --fixture")
    if args.input is not None:
        return load_system(args.input)
    if args.fixture == "diffusion":
        return build_named_system("diffusion", args.N, mu=args.mu)
    if args.fixture == "random-subexp-A":
        return build_named_system("random-subexp-A", args.N, sigma=args.sigma,
                                  delta=args.delta, seed=args.seed)
    return build_named_system("scalar-embed", 0, a=args.a)


def _spec(args) -> QMeasureSpec:
    if not args.q > 0:
        raise ValidationError("q must be positive; use s01 for the ideal measure")
    try:
        weight = WeightFunction.parse(args.weight)
    except ValueError as exc:
        raise ValidationError(f"weight: {exc}") from None
    return QMeasureSpec(args.q, weight)


def _echo(args) -> dict:
    """All parameters, defaulted or not, for the manifest."""
    out = {}
    for k, v in sorted(vars(args).items()):
        if k == "func":
            continue
        out[k] = str(v) if isinstance(v, Path) else v
    return out


# -- subcommands -------------------------------------------------------------

def cmd_measure(args):
    system = _system(args)
    M = getattr(system, args.matrix)
    if args.s01:
        value = s01_measure(M)
        print(value)
        return {"measure.json": _json({"s01": value, "matrix": args.matrix,
                                       "config": _echo(args)})}
    spec = _spec(args)
    rep = measure_report(M, spec)
    rows, cols = weighted_line_sums(M, spec)
    sites = np.arange(-system.N, system.N + 1)
    print(_json(rep.to_dict()), end="")
    return {
        "measure.json": _json({**rep.to_dict(), "matrix": args.matrix, "config": _echo(args)}),
        "measure_line_sums.csv": _csv(("site", "row_sum_pow_q", "col_sum_pow_q"),
                                      zip(sites, rows, cols)),
    }


def cmd_stability(args):
    system = _system(args)
    spec = _spec(args)
    A = system.A
    cert = fit_semigroup_bound(A)
    params = semigroup_bound_params(A, spec)
    t_max = args.t_max if args.t_max is not None else 10.0 / cert.alpha
    ts = np.linspace(0.0, t_max, args.t_points)
    measured = [sqw_measure_pow(matrix_exponential(A, t), spec) for t in ts]
    log_bound = log_semigroup_qnorm_bound(A, spec, cert, ts, params)
    bound = np.exp(np.minimum(log_bound, 709.0))
    bound[log_bound > 709.0] = np.inf
    summary = {"certificate": cert.to_dict(), "params": params.to_dict(),
               "bound_holds": bool(np.all(np.log(measured) <= log_bound)),
               "config": _echo(args)}
    print(_json({k: summary[k] for k in ("params", "bound_holds")}), end="")
    return {
        "stability.json": _json(summary),
        "stability.csv": _csv(("t", "measured_qnorm_pow", "bound", "log_bound"),
                              zip(ts, measured, bound, log_bound)),
    }


def cmd_lyapunov(args):
    system = _system(args)
    A, Q = system.A, system.Q
    result = {"config": _echo(args)}
    sols = {}
    if args.method in ("direct", "both"):
        sols["direct"] = solve_lyapunov_direct(A, Q)
    if args.method in ("iterative", "both"):
        sols["iterative"] = solve_lyapunov_iterative(A, Q, tol=args.tol)
    for k, s in sols.items():
        result[k] = s.to_dict()
    if len(sols) == 2:
        Pd, Pi = sols["direct"].P, sols["iterative"].P
        result["relative_difference"] = float(np.linalg.norm(Pd - Pi) / np.linalg.norm(Pd))
    P = next(iter(sols.values())).P
    if args.bound:
        spec = _spec(args)
        cert = fit_semigroup_bound(A)
        b = lyapunov_qnorm_bound(A, Q, spec, cert, as_log=True)
        result["bound"] = b.to_dict()
        result["measured_qnorm_pow"] = sqw_measure_pow(P, spec)
    print(_json({k: v for k, v in result.items() if k != "config"}), end="")
    prof = _decay_profile(P)
    return {"lyapunov.json": _json(result),
            "lyapunov_decay.csv": _csv(("distance", "max_abs_P"), enumerate(prof))}


def _try_envelope(M):
    # a 1x1 or diagonal matrix carries no decay information
    try:
        return fit_decay_envelope(M, "subexp")
    except ValidationError:
        return None


def _care_bundle(system, spec):
    care = solve_care(system.A, system.B, system.Q, system.R)
    env_K = _try_envelope(care.K)
    env_X = _try_envelope(care.X)
    summary = {
        "care": care.to_dict(),
        "envelope_K": env_K.to_dict() if env_K is not None else None,
        "envelope_X": env_X.to_dict() if env_X is not None else None,
        "measure_K_pow_q": sqw_measure_pow(care.K, spec),
        "measure_X_pow_q": sqw_measure_pow(care.X, spec),
    }
    return care, env_K, summary


def cmd_lqr(args):
    system = _system(args)
    spec = _spec(args)
    care, _, summary = _care_bundle(system, spec)
    summary["config"] = _echo(args)
    print(_json({k: v for k, v in summary.items() if k != "config"}), end="")
    rows = zip(range(care.X.shape[0]), _decay_profile(care.X), _decay_profile(care.K))
    return {"lqr.json": _json(summary),
            "lqr_decay.csv": _csv(("distance", "max_abs_X", "max_abs_K"), rows)}


def _sweep(system, care, env_K, spec, T_max):
    n = care.K.shape[0]
    T_values = range(0, n if T_max is None else min(T_max, n - 1) + 1)
    peak = hinf_resolvent_peak(system.A - system.B @ care.K)
    rep = truncation_sweep(system, care, spec, T_values=T_values)
    if env_K is not None:
        rep.T_s = stabilizing_truncation_length(system, care, env_K, peak=peak)
    rep.params.update({"hinf_peak": peak,
                       "envelope": env_K.to_dict() if env_K is not None else None})
    return rep


def cmd_truncate(args):
    system = _system(args)
    spec = _spec(args)
    care, env_K, _ = _care_bundle(system, spec)
    rep = _sweep(system, care, env_K, spec, args.T_max)
    out = rep.to_dict()
    out["config"] = _echo(args)
    header, rows = rep.table()
    print(_json({"T_s": rep.T_s, "hinf_peak": rep.params["hinf_peak"]}), end="")
    return {"truncate.json": _json(out), "truncate.csv": _csv(header, rows)}


def _indicator_table(res):
    header = ("T", "epsilon", "q", "psi_median", "psi_p05", "psi_p95", "gamma")
    return _csv(header, [[r[h] for h in header] for r in res.table])


def cmd_indicator(args):
    if not args.beta > 0:
        raise ValidationError("beta must be positive")
    if not 0 < args.delta <= 1:
        raise ValidationError("delta must lie in (0, 1]")
    if not 0 < args.rel_tol < 1:
        raise ValidationError("rel-tol must lie in (0, 1)")
    T_max = args.T_max if args.T_max is not None else args.N // 2
    res = near_optimal_q(args.sigma, args.delta, args.beta, args.N, seeds=range(args.seeds),
                         rel_tol=args.rel_tol, T_values=range(1, T_max + 1),
                         deterministic=args.deterministic)
    out = res.to_dict()
    out.pop("table")
    out["config"] = _echo(args)
    print(_json({k: v for k, v in out.items() if k != "config"}), end="")
    return {"indicator.json": _json(out), "indicator.csv": _indicator_table(res)}


def cmd_report(args):
    system = _system(args)
    spec = _spec(args)
    care, env_K, summary = _care_bundle(system, spec)
    if env_K is None:
        raise ValidationError("report needs a gain with off-diagonal entries to fit a decay envelope")
    rep = _sweep(system, care, env_K, spec, args.T_max)
    w = env_K.weight
    delta = min(w.delta, 1.0)
    ind_N = args.indicator_N if args.indicator_N is not None else system.N
    T_max = max(1, min(ind_N // 2, args.indicator_T_max))
    # default beta makes the indicator limit equal to one
    beta = args.beta if args.beta is not None else math.gamma((1.0 + delta) / delta) ** delta
    ind = near_optimal_q(w.sigma, delta, beta, ind_N, seeds=range(args.seeds),
                         rel_tol=args.rel_tol, T_values=range(1, T_max + 1),
                         T_s=rep.T_s, deterministic=delta >= 1)
    header, rows = rep.table()
    files = {
        "care.json": _json(summary),
        "sweep.csv": _csv(header, rows),
        "sweep.json": _json(rep.to_dict()),
        "indicator.csv": _indicator_table(ind),
        "indicator.json": _json({k: v for k, v in ind.to_dict().items() if k != "table"}),
    }
    manifest = {
        "version": __version__,
        "files": sorted(files),
        "T_s": rep.T_s,
        "T_near_ideal": ind.T_near_ideal,
        "T_near_optimal": ind.T_near_optimal,
        "indicator_converged": ind.converged,
        "indicator_beta": beta,
        "system_provenance": system.provenance,
        "config": _echo(args),
        "defaults": {"x0": "normalised all-ones vector", "envelope_family": "subexp",
                     "indicator_ensemble": "deterministic" if delta >= 1 else "random"},
    }
    files["manifest.json"] = _json(manifest)
    print(_json({k: manifest[k] for k in ("T_s", "T_near_ideal", "T_near_optimal")}), end="")
    return files


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decaylab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("measure", cmd_measure, "weighted Schur measures of a system matrix")
    _add_system_args(p)
    _add_measure_args(p, weight_default="trivial")
    p.add_argument("--matrix", choices=list("ABQR"), default="A")
    p.add_argument("--s01", action="store_true", help="print the nonzero-count measure only")

    p = add("stability", cmd_stability, "semigroup q-norm bound versus measurement")
    _add_system_args(p)
    _add_measure_args(p)
    p.add_argument("--t-points", type=_positive(int), default=20)
    p.add_argument("--t-max", type=_positive(float), default=None,
                   help="largest time (default 10/alpha)")

    p = add("lyapunov", cmd_lyapunov, "solve A P + P A* + Q = 0")
    _add_system_args(p)
    _add_measure_args(p)
    p.add_argument("--method", choices=["direct", "iterative", "both"], default="both")
    p.add_argument("--tol", type=_positive(float), default=1e-12)
    p.add_argument("--bound", action="store_true", help="evaluate the q-norm bound on P")

    p = add("lqr", cmd_lqr, "Riccati solution, LQR gain and decay envelopes")
    _add_system_args(p)
    _add_measure_args(p)

    p = add("truncate", cmd_truncate, "truncation sweep of the LQR gain")
    _add_system_args(p)
    _add_measure_args(p)
    p.add_argument("--T-max", type=int, default=None, help="largest truncation length (default 2N)")

    p = add("indicator", cmd_indicator, "sparsity indicator scan over truncation lengths")
    p.add_argument("--sigma", type=_positive(float), default=1.0)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=math.sqrt(2.0))
    p.add_argument("--seeds", type=_positive(int), default=10)
    p.add_argument("--N", type=_positive(int), default=500)
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--T-max", type=_positive(int), default=None, help="default N/2")
    p.add_argument("--deterministic", action="store_true", help="use r_ij = 1")

    p = add("report", cmd_report, "full pipeline into one bundle directory")
    _add_system_args(p)
    _add_measure_args(p)
    p.add_argument("--T-max", type=int, default=None)
    p.add_argument("--beta", type=_positive(float), default=None,
                   help="indicator beta (default: the value giving gamma = 1)")
    p.add_argument("--seeds", type=_positive(int), default=5)
    p.add_argument("--rel-tol", type=float, default=0.05)
    p.add_argument("--indicator-N", type=_positive(int), default=None)
    p.add_argument("--indicator-T-max", type=_positive(int), default=40)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = os.environ.get("DECAYLAB_THREADS")
    try:
        limit = int(threads) if threads else None
        if limit is not None and limit < 1:
            raise ValueError
    except ValueError:
        print(f"error: DECAYLAB_THREADS must be a positive integer, got {threads!r}",
              file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with threadpool_limits(limits=limit):
            files = args.func(args)
        _write_outputs(args.out, files)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
