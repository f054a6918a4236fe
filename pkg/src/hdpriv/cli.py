"""Command-line interface: ``hdp calibrate|compose|convert|estimate|ci|simulate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .density import KdeEstimate, load_dataset, silverman_bandwidth
from .divergence import DomainError
from .hdloss import DEFAULT_MC_FACTOR, McLossContext, NumericalError
from .inference import CORRECTIONS, corrected_ci
from .optimize import DEFAULT_THETA0, OptimizerAbort, OptimizerConfig, private_run, robust_start
from .privacy import (
    HDP_LAMBDA,
    ConversionError,
    PrivacyBudget,
    RootFindingError,
    calibrate_gaussian_hdp,
    calibrate_gaussian_pdp,
    calibrate_laplace_hdp_exact_1d,
    calibrate_laplace_pdp,
    compose_hdp,
    compose_hdp_k,
    compose_hdp_parallel,
    compose_pdp,
    group_privacy_hdp,
    hdp_to_approx_dp,
    hdp_to_gdp,
    pdp_to_approx_dp,
    pdp_to_rdp,
    pdp_to_zcdp,
    solve_per_step_epsilon,
    solve_per_step_epsilon_pdp,
)

EXIT_OK, EXIT_IO, EXIT_VALIDATION, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "HDP_SEED"

log = logging.getLogger("hdpriv")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise DomainError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(args, payload: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(_jsonable(payload), indent=2, sort_keys=False))
    else:
        print("\n".join(lines))


def _r(v) -> str:
    # repr keeps human and JSON output numerically identical
    if v is None:
        return "none"
    return repr(float(v))


# ---------------------------------------------------------------------------
# calibrate

def cmd_calibrate(args) -> int:
    if args.hdp and args.lam is not None:
        raise DomainError("use either --hdp or --lambda, not both")
    lam = HDP_LAMBDA if args.lam is None else args.lam
    hdp = args.hdp or args.lam is None
    notes = []
    if args.mech == "gaussian":
        if hdp:
            spec = calibrate_gaussian_hdp(args.sens, args.eps, args.dim)
        else:
            spec = calibrate_gaussian_pdp(args.sens, PrivacyBudget(lam, args.eps), args.dim)
    else:
        if args.exact:
            if not hdp or args.dim != 1:
                raise DomainError("--exact applies to one-dimensional HDP Laplace calibration")
            spec = calibrate_laplace_hdp_exact_1d(args.sens, args.eps)
        else:
            budget = PrivacyBudget.hdp(args.eps) if hdp else PrivacyBudget(lam, args.eps)
            spec = calibrate_laplace_pdp(args.sens, budget, args.dim)
    if spec.scale == 0.0:
        notes.append("non-private: no noise required")
    payload = {
        "mechanism": spec.kind, "lambda": lam, "epsilon": args.eps, "hdp": hdp,
        "sensitivity": spec.sensitivity, "dim": spec.dim, "scale": spec.scale,
        "variance": spec.variance, "notes": notes,
    }
    name = "sigma" if spec.kind == "gaussian" else "b"
    level = f"{args.eps}-HDP" if hdp else f"({lam}, {args.eps})-PDP"
    lines = [
        f"mechanism: {spec.kind} at {level}",
        f"{name}: {_r(spec.scale)}",
        f"variance: {_r(spec.variance)}",
    ] + [f"note: {n}" for n in notes]
    _emit(args, payload, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# compose

def cmd_compose(args) -> int:
    lam = HDP_LAMBDA if args.lam is None else args.lam
    hdp = args.lam is None or args.lam == HDP_LAMBDA
    if args.target is not None:
        if args.K is None:
            raise DomainError("--target needs --K")
        if hdp:
            step = solve_per_step_epsilon(args.target, args.K)
            check = compose_hdp_k(step, args.K)
        else:
            step = solve_per_step_epsilon_pdp(args.target, args.K, lam)
            check = step
            for _ in range(args.K - 1):
                check = compose_pdp(check, step, lam)
        payload = {"mode": "split", "lambda": lam, "target": args.target, "K": args.K,
                   "per_step": step, "recomposed": check}
        lines = [f"per-step epsilon for {args.K} steps: {_r(step)}", f"recomposed total: {_r(check)}"]
        _emit(args, payload, lines)
        return EXIT_OK

    if not args.eps:
        raise DomainError("give --eps (one value, or several) or --target with --K")
    eps = list(args.eps)
    if args.K is not None:
        if len(eps) != 1:
            raise DomainError("--K composes a single repeated level; pass one --eps value")
        eps = eps * args.K
    if args.parallel:
        if not hdp:
            raise DomainError("--parallel is defined for HDP levels")
        total = eps[0]
        for e in eps[1:]:
            total = compose_hdp_parallel(total, e)
    else:
        total = eps[0]
        if hdp:
            for e in eps[1:]:
                total = compose_hdp(total, e)
        else:
            PrivacyBudget(lam, total)
            for e in eps[1:]:
                total = compose_pdp(total, e, lam)
    payload = {"mode": "parallel" if args.parallel else "sequential", "lambda": lam,
               "levels": eps, "total": total}
    lines = [f"composed {len(eps)} release(s) ({payload['mode']}): {_r(total)}"]
    _emit(args, payload, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# convert

def cmd_convert(args) -> int:
    lam = HDP_LAMBDA if args.lam is None else args.lam
    to = args.to
    result: dict
    if to in ("gdp", "approx", "group"):
        if args.lam is not None and args.lam != HDP_LAMBDA:
            raise ConversionError(f"--to {to} starts from an HDP level; drop --lambda")
        if to == "gdp":
            mu = hdp_to_gdp(args.eps)
            result = {"mu": mu}
            lines = [f"mu-GDP: {_r(mu)}" + ("" if mu is not None else " (no finite mu for eps >= 1)")]
        elif to == "approx":
            e, d = hdp_to_approx_dp(args.eps)
            result = {"epsilon": e, "delta": d}
            lines = [f"(epsilon, delta)-DP: ({_r(e)}, {_r(d)})"]
        else:
            if args.k is None:
                raise DomainError("--to group needs --k")
            g = group_privacy_hdp(args.eps, args.k)
            result = {"k": args.k, "epsilon": g}
            lines = [f"group of {args.k}: {_r(g)}-HDP"]
    else:
        budget = PrivacyBudget(lam, args.eps)
        if to == "rdp":
            alpha, e = pdp_to_rdp(budget, loose=args.loose)
            result = {"alpha": alpha, "epsilon": e}
            lines = [f"RDP: order {_r(alpha)}, epsilon {_r(e)}"]
        elif to == "zcdp":
            rho = pdp_to_zcdp(budget)
            result = {"rho": rho}
            lines = [f"zCDP rho: {_r(rho)}"]
        else:
            if args.delta is None:
                raise DomainError("--to dp needs --delta")
            e = pdp_to_approx_dp(budget, args.delta)
            result = {"epsilon": e, "delta": args.delta}
            lines = [f"(epsilon, delta)-DP: ({_r(e)}, {_r(args.delta)})"]
    payload = {"from": {"lambda": lam, "epsilon": args.eps}, "to": to, "result": result}
    _emit(args, payload, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate / ci

def _fit(args):
    data = load_dataset(args.data)
    seed = args.seed if args.seed is not None else _default_seed()
    bw = args.bandwidth if args.bandwidth is not None else silverman_bandwidth(data)
    kde = KdeEstimate(data, bw)
    root = np.random.SeedSequence(seed)
    mc_seq, noise_seq, ci_seq = root.spawn(3)
    ctx = McLossContext.draw(kde, np.random.default_rng(mc_seq), r=args.mc_factor * kde.n)
    cfg = OptimizerConfig(K=args.K, eta=args.eta, total_epsilon=args.eps, p=args.p,
                          mode=args.algo, seed=seed, lam=HDP_LAMBDA if args.lam is None else args.lam,
                          weak=args.weak)
    start = args.start
    if start == "auto":
        start = "robust" if args.algo == "nr" else "fixed"
    theta0 = robust_start(data) if start == "robust" else np.array(DEFAULT_THETA0)
    trace = private_run(ctx, cfg, theta0, noise_seq)
    report = corrected_ci(trace, ctx, np.random.default_rng(ci_seq), level=args.level,
                          eps_ci=args.eps_ci, correction=args.correction, p=args.p)
    return data, bw, ctx, cfg, trace, report


def _write_trace(path: str, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("iter", "mu", "sigma", "loss", "eps_spent"))
        spent = np.concatenate([[0.0], trace.epsilon_spent])
        for k, (th, loss, s) in enumerate(zip(trace.thetas, trace.losses, spent)):
            w.writerow((k, repr(float(th[0])), repr(float(th[1])), repr(float(loss)), repr(float(s))))


def _ci_lines(report) -> list[str]:
    lines = []
    for j, name in enumerate(("mu", "sigma")):
        lo, hi = report.ci_plain[j]
        clo, chi = report.ci_corrected[j]
        lines.append(f"{name}: {_r(report.estimate[j])}  CI [{_r(lo)}, {_r(hi)}]  "
                     f"corrected [{_r(clo)}, {_r(chi)}]")
    return lines


def cmd_estimate(args) -> int:
    data, bw, ctx, cfg, trace, report = _fit(args)
    if args.trace:
        _write_trace(args.trace, trace)
    payload = {
        "n": int(data.size), "bandwidth": bw, "algo": args.algo, "K": trace.K, "eta": args.eta,
        "lambda": cfg.lam, "theta": trace.theta, "epsilon_spent": trace.total_spent,
        "per_step_epsilon": trace.eps_step, "ci": report.as_dict(),
        "projections": trace.projections, "clipped_eigenvalues": trace.clipped_eigs,
    }
    lines = [
        f"n: {data.size}  bandwidth: {_r(bw)}  algo: {args.algo}  K: {trace.K}",
        f"theta: mu={_r(trace.theta[0])} sigma={_r(trace.theta[1])}",
        f"epsilon spent (estimate): {_r(trace.total_spent)}",
        f"epsilon spent (estimate + CI): {_r(report.epsilon_total)}",
    ] + _ci_lines(report)
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_ci(args) -> int:
    _, _, _, _, trace, report = _fit(args)
    payload = report.as_dict()
    lines = [f"{report.level:.0%} confidence intervals ({_r(report.epsilon_total)}-HDP in total)"]
    lines += _ci_lines(report)
    _emit(args, payload, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    overrides = {
        "reps": args.reps, "n": args.n, "seed": args.seed, "workers": args.workers,
        "correction": args.correction,
        "epsilon_grid": tuple(args.eps) if args.eps else None,
        "mc_factor": args.mc_factor,
    }
    if args.seed is None and os.environ.get(SEED_ENV) is not None:
        overrides["seed"] = _default_seed()
    if args.config:
        cfg = experiments.load_config(args.config, **overrides)
        name = args.preset or Path(args.config).stem
    else:
        if not args.preset:
            raise DomainError("give --preset or --config")
        cfg = experiments.preset_config(args.preset, **overrides)
        name = args.preset
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    keep = bool(args.replications or args.traces)
    result = experiments.run_simulation(cfg, keep_replications=keep, keep_traces=bool(args.traces))
    table_path = out_dir / f"{name}.csv"
    with open(table_path, "w", newline="", encoding="utf-8") as fh:
        experiments.write_table_csv(result, fh)
    written = [str(table_path)]
    if args.replications:
        p = out_dir / f"{name}_replications.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            experiments.write_replications_csv(result, fh)
        written.append(str(p))
    if args.traces:
        p = out_dir / f"{name}_traces.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            experiments.write_traces_csv(result, fh)
        written.append(str(p))
    if args.coverage_sizes:
        rows = experiments.coverage_curve(cfg, [int(v) for v in args.coverage_sizes])
        p = out_dir / f"{name}_coverage.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=("n", "coverage_corrected", "coverage_uncorrected"),
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        written.append(str(p))

    cells = [row for c in result.cells for row in c.rows()]
    payload = {"table": name, "reps": cfg.reps, "files": written, "cells": cells}
    lines = [f"{name}: {cfg.reps} replications, n={cfg.n}, algo={cfg.algo}"]
    for row in cells:
        lines.append(
            f"  {row['estimator']:5s} eps={_r(row['epsilon'])} alpha={_r(row['alpha'])} {row['coord']:5s} "
            f"mean={_r(row['mean'])} se={_r(row['se'])} cov={_r(row['cov_corr'])}/{_r(row['cov_uncorr'])}"
        )
    lines += [f"wrote {p}" for p in written]
    _emit(args, payload, lines)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="file with one observation per line")
    p.add_argument("--algo", choices=("gd", "nr"), default="gd")
    p.add_argument("--eps", type=float, default=2.0,
                   help="estimator privacy level (HDP unless --lambda is given); inf disables noise")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--K", type=int, default=None, help="iterations (default 50 for gd, 5 for nr)")
    p.add_argument("--eta", type=float, default=0.5)
    p.add_argument("--p", type=float, default=1.7, help="sensitivity rate exponent in (1, 2]")
    p.add_argument("--weak", action="store_true", help="use n^-1/2 sensitivities")
    p.add_argument("--seed", type=int, default=None, help=f"default from ${SEED_ENV} or 0")
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--mc-factor", type=int, default=DEFAULT_MC_FACTOR,
                   help="Monte-Carlo draws per observation")
    p.add_argument("--start", choices=("auto", "fixed", "robust"), default="auto")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--eps-ci", type=float, default=None, help="HDP level of the covariance release")
    p.add_argument("--correction", choices=CORRECTIONS, default="auto")
    p.add_argument("--json", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdp", description="Hellinger differential privacy toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="noise scale for a target privacy level")
    p.add_argument("--mech", choices=("gaussian", "laplace"), default="gaussian")
    p.add_argument("--hdp", action="store_true", help="treat --eps as an HDP level (default)")
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="PDP order")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--sens", type=float, required=True, help="L2 (gaussian) or L1 (laplace) sensitivity")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--exact", action="store_true", help="exact one-dimensional Laplace HDP scale")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compose", help="compose levels or split a total across K steps")
    p.add_argument("--eps", type=_float_list, default=None, help="comma-separated levels")
    p.add_argument("--K", type=int, default=None)
    p.add_argument("--target", type=float, default=None, help="total to split across --K steps")
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--parallel", action="store_true", help="disjoint data: take the maximum")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("convert", help="translate a level into another privacy framework")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--to", choices=("gdp", "approx", "group", "rdp", "zcdp", "dp"), required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--delta", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="group size")
    p.add_argument("--loose", action="store_true", help="weaker RDP statement")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("estimate", help="private Hellinger estimate of a normal model")
    _fit_flags(p)
    p.add_argument("--trace", default=None, help="write the iterate trace to this CSV")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("ci", help="private confidence intervals for the normal model")
    _fit_flags(p)
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("simulate", help="replicated simulation tables")
    p.add_argument("--preset", choices=sorted(experiments.PRESETS), default=None)
    p.add_argument("--config", default=None, help="key = value file; may name a preset")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--eps", type=_float_list, default=None, help="override the epsilon grid")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--mc-factor", type=int, default=None)
    p.add_argument("--correction", choices=CORRECTIONS, default=None)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--replications", action="store_true", help="also write per-replication CSV")
    p.add_argument("--traces", action="store_true", help="also write iterate traces")
    p.add_argument("--coverage-sizes", type=_float_list, default=None,
                   help="sample sizes for a coverage-vs-n curve")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        print(f"hdp: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OptimizerAbort, NumericalError, RootFindingError, np.linalg.LinAlgError) as exc:
        print(f"hdp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, ConversionError, experiments.ConfigError, ValueError) as exc:
        print(f"hdp: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
