"""Replicated simulations of private Hellinger estimation under clean and contaminated data."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy.stats import norm

from .density import KdeEstimate, silverman_bandwidth
from .divergence import DomainError
from .hdloss import DEFAULT_MC_FACTOR, McLossContext, NumericalError
from .inference import CiReport, corrected_ci
from .optimize import DEFAULT_THETA0, NOISE_FLOOR, OptimizerAbort, OptimizerConfig, private_run, robust_start
from .privacy import HDP_LAMBDA, std_normal_quantile

log = logging.getLogger(__name__)

TABLE_HEADER = (
    "epsilon", "alpha", "coord", "mean", "se", "cov_corr", "cov_uncorr",
    "n_thresholded", "n_failed", "estimator", "mean_all", "se_all",
    "cov_corr_kept", "cov_uncorr_kept",
)
REP_HEADER = (
    "rep", "epsilon", "alpha", "estimator", "coord", "estimate", "ci_lo", "ci_hi",
    "ci_lo_corr", "ci_hi_corr", "covered", "covered_corr", "thresholded", "failed",
)
TRACE_HEADER = ("rep", "iter", "mu", "sigma", "loss", "eps_spent")
COORDS = ("mu", "sigma")


@dataclass
class SimulationConfig:
    """One simulated table: a grid of privacy levels by contamination levels.

    ``epsilon_grid`` entries are HDP levels when ``lam = -1/2`` and PDP levels
    otherwise; ``inf`` requests a non-private run.
    """

    n: int = 1000
    reps: int = 500
    true_theta: tuple[float, float] = (5.0, 2.0)
    epsilon_grid: tuple[float, ...] = (2.0, 0.6, 0.2)
    lam: float = HDP_LAMBDA
    algo: Literal["gd", "nr", "mle"] = "gd"
    K: int | None = None
    eta: float = 0.5
    p: float = 1.7
    seed: int = 20240101
    alphas: tuple[float, ...] = (0.0,)
    contamination_interval: tuple[float, float] = (9.34, 10.15)
    threshold: tuple[float, float] | None = None
    include_mle: bool = False
    start: Literal["auto", "fixed", "robust"] = "auto"
    bandwidth: float | None = None
    mc_factor: int = DEFAULT_MC_FACTOR
    noise_floor: float = NOISE_FLOOR
    correction: Literal["auto", "squared", "verbatim"] = "auto"
    level: float = 0.95
    weak: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        self.true_theta = tuple(float(v) for v in self.true_theta)
        self.epsilon_grid = tuple(float(v) for v in self.epsilon_grid)
        self.alphas = tuple(float(v) for v in self.alphas)
        self.contamination_interval = tuple(float(v) for v in self.contamination_interval)
        if self.threshold is not None:
            self.threshold = tuple(float(v) for v in self.threshold)
        self.validate()

    def validate(self) -> None:
        if self.n < 2:
            raise DomainError(f"n must be at least 2, got {self.n}")
        if self.mc_factor < 1:
            raise DomainError(f"mc_factor must be at least 1, got {self.mc_factor}")
        if self.reps < 0:
            raise DomainError(f"reps must be non-negative, got {self.reps}")
        if self.algo not in ("gd", "nr", "mle"):
            raise DomainError(f"algo must be gd, nr or mle, got {self.algo!r}")
        lo, hi = self.contamination_interval
        if not lo < hi:
            raise DomainError("contamination interval needs lo < hi")
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise DomainError(f"contamination level must lie in [0, 1], got {a}")
        if self.threshold is not None:
            tlo, thi = self.threshold
            if not 0 < tlo < thi < 1:
                raise DomainError("threshold percentiles need 0 < lo < hi < 1")
        if self.start not in ("auto", "fixed", "robust"):
            raise DomainError(f"unknown start {self.start!r}")
        if self.correction not in ("auto", "squared", "verbatim"):
            raise DomainError(f"unknown correction {self.correction!r}")
        if self.algo != "mle":
            for eps in self.epsilon_grid:
                self.optimizer_config(eps)

    @property
    def iterations(self) -> int:
        if self.K is not None:
            return self.K
        return 50 if self.algo == "gd" else 5

    def optimizer_config(self, eps: float) -> OptimizerConfig:
        return OptimizerConfig(
            K=self.iterations, eta=self.eta, total_epsilon=eps, p=self.p,
            mode="nr" if self.algo == "nr" else "gd", seed=self.seed, lam=self.lam,
            weak=self.weak, noise_floor=self.noise_floor,
        )

    def start_point(self, data: np.ndarray) -> np.ndarray:
        start = self.start
        if start == "auto":
            # Newton from (1, 1) sees an indefinite Hessian; it needs a consistent start
            start = "robust" if self.algo == "nr" else "fixed"
        if start == "robust":
            return robust_start(data)
        return np.array(DEFAULT_THETA0, dtype=float)


@dataclass
class CellSummary:
    """Aggregates of one (epsilon, alpha) cell, one entry per coordinate."""

    epsilon: float
    alpha: float
    estimator: str
    mean: np.ndarray
    std_error: np.ndarray
    coverage_corrected: np.ndarray
    coverage_uncorrected: np.ndarray
    n_thresholded: int
    n_failed: int
    mean_all: np.ndarray
    se_all: np.ndarray
    n_reps: int
    coverage_corrected_kept: np.ndarray | None = None
    coverage_uncorrected_kept: np.ndarray | None = None

    @staticmethod
    def _kept(kept, full):
        return full if kept is None else kept

    def rows(self) -> list[dict]:
        out = []
        for j, name in enumerate(COORDS):
            out.append({
                "epsilon": self.epsilon, "alpha": self.alpha, "coord": name,
                "mean": self.mean[j], "se": self.std_error[j],
                "cov_corr": self.coverage_corrected[j], "cov_uncorr": self.coverage_uncorrected[j],
                "n_thresholded": self.n_thresholded, "n_failed": self.n_failed,
                "estimator": self.estimator, "mean_all": self.mean_all[j], "se_all": self.se_all[j],
                "cov_corr_kept": self._kept(self.coverage_corrected_kept, self.coverage_corrected)[j],
                "cov_uncorr_kept": self._kept(self.coverage_uncorrected_kept, self.coverage_uncorrected)[j],
            })
        return out


@dataclass
class RepResult:
    rep: int
    alpha: float
    estimator: str
    epsilon: float
    estimate: np.ndarray | None
    ci_plain: np.ndarray | None = None
    ci_corrected: np.ndarray | None = None
    failed: bool = False
    reference: np.ndarray | None = None
    trace: np.ndarray | None = None
    message: str = ""


def generate_contaminated(n: int, true_theta, alpha: float, interval, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` points from ``(1 - alpha) N(mu, sigma^2) + alpha U(lo, hi)``."""
    mu, sigma = true_theta
    lo, hi = interval
    x = rng.normal(mu, sigma, size=n)
    if alpha > 0:
        bad = rng.random(n) < alpha
        x[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
    return x


def mle_estimate(data) -> np.ndarray:
    """Sample mean and maximum-likelihood standard deviation."""
    x = np.asarray(data, dtype=float)
    if x.size < 2:
        raise DomainError("MLE needs at least two observations")
    sd = float(np.std(x))
    if sd == 0:
        raise DomainError("MLE undefined for constant data")
    return np.array([float(np.mean(x)), sd])


def mle_ci(data, level: float = 0.95) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    est = mle_estimate(x)
    z = std_normal_quantile(0.5 + level / 2)
    se = np.array([est[1], est[1] / math.sqrt(2.0)]) / math.sqrt(x.size)
    return np.column_stack([est - z * se, est + z * se])


def threshold_bounds(reference, lo_pct: float = 0.007, hi_pct: float = 0.995) -> tuple[float, float]:
    mu, sigma = float(reference[0]), float(reference[1])
    return float(norm.ppf(lo_pct, mu, sigma)), float(norm.ppf(hi_pct, mu, sigma))


def threshold_estimates(estimates: Sequence, nonprivate_ref, lo_pct: float = 0.007,
                        hi_pct: float = 0.995) -> tuple[list, int]:
    """Drop estimates whose ``mu`` falls outside the Gaussian percentiles of the reference.

    ``nonprivate_ref`` is either one ``(mu, sigma)`` pair or one pair per estimate.
    Returns the kept estimates and the number dropped.
    """
    refs = np.asarray(nonprivate_ref, dtype=float)
    if refs.ndim == 1:
        refs = np.broadcast_to(refs, (len(estimates), 2))
    kept = []
    for est, ref in zip(estimates, refs):
        lo, hi = threshold_bounds(ref, lo_pct, hi_pct)
        if lo <= float(est[0]) <= hi:
            kept.append(est)
    return kept, len(estimates) - len(kept)


def _rep_seed(cfg: SimulationConfig, alpha_idx: int, rep: int, stream: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.seed, spawn_key=(alpha_idx, rep, stream))


def _cell_bandwidth(cfg: SimulationConfig, alpha_idx: int) -> float:
    if cfg.bandwidth is not None:
        return cfg.bandwidth
    # chosen on the first replication's dataset, then frozen for the cell
    rng = np.random.default_rng(_rep_seed(cfg, alpha_idx, 0, 0))
    x = generate_contaminated(cfg.n, cfg.true_theta, cfg.alphas[alpha_idx], cfg.contamination_interval, rng)
    return silverman_bandwidth(x)


def run_replication(cfg: SimulationConfig, alpha_idx: int, rep: int, bandwidth: float,
                    keep_traces: bool = False) -> list[RepResult]:
    """All estimators of one replicated dataset, one result per (estimator, epsilon)."""
    alpha = cfg.alphas[alpha_idx]
    rng = np.random.default_rng(_rep_seed(cfg, alpha_idx, rep, 0))
    data = generate_contaminated(cfg.n, cfg.true_theta, alpha, cfg.contamination_interval, rng)
    out: list[RepResult] = []
    if cfg.include_mle or cfg.algo == "mle":
        try:
            out.append(RepResult(rep, alpha, "mle", math.nan, mle_estimate(data), mle_ci(data, cfg.level),
                                 mle_ci(data, cfg.level)))
        except DomainError as exc:
            out.append(RepResult(rep, alpha, "mle", math.nan, None, failed=True, message=str(exc)))
    if cfg.algo == "mle":
        return out

    try:
        ctx = McLossContext.draw(KdeEstimate(data, bandwidth), rng, r=cfg.mc_factor * cfg.n)
    except (DomainError, NumericalError) as exc:
        for eps in cfg.epsilon_grid:
            out.append(RepResult(rep, alpha, "pmhde", eps, None, failed=True, message=str(exc)))
        return out
    theta0 = cfg.start_point(data)

    reference = None
    if cfg.threshold is not None:
        try:
            ref_trace = private_run(ctx, cfg.optimizer_config(math.inf if cfg.lam != HDP_LAMBDA else 2.0),
                                    theta0, _rep_seed(cfg, alpha_idx, rep, 1))
            reference = ref_trace.theta
        except OptimizerAbort:
            reference = mle_estimate(data)

    for e_idx, eps in enumerate(cfg.epsilon_grid):
        ocfg = cfg.optimizer_config(eps)
        try:
            trace = private_run(ctx, ocfg, theta0, _rep_seed(cfg, alpha_idx, rep, 2 + 2 * e_idx))
            ci: CiReport = corrected_ci(trace, ctx, np.random.default_rng(_rep_seed(cfg, alpha_idx, rep, 3 + 2 * e_idx)),
                                        level=cfg.level, correction=cfg.correction, p=cfg.p)
        except (OptimizerAbort, NumericalError, np.linalg.LinAlgError) as exc:
            log.info("rep %d eps %s alpha %s failed: %s", rep, eps, alpha, exc)
            out.append(RepResult(rep, alpha, "pmhde", eps, None, failed=True, message=str(exc)))
            continue
        tr = None
        if keep_traces:
            tr = np.column_stack([trace.thetas, trace.losses,
                                  np.concatenate([[0.0], trace.epsilon_spent])])
        out.append(RepResult(rep, alpha, "pmhde", eps, trace.theta.copy(), ci.ci_plain, ci.ci_corrected,
                             reference=reference, trace=tr))
    return out


def _replication_job(args):
    cfg, alpha_idx, rep, bandwidth, keep = args
    return run_replication(cfg, alpha_idx, rep, bandwidth, keep)


def _summarise(results: list[RepResult], truth, threshold) -> CellSummary:
    first = results[0]
    ok = [r for r in results if not r.failed]
    failed = len(results) - len(ok)
    nan2 = np.full(2, np.nan)
    if not ok:
        return CellSummary(first.epsilon, first.alpha, first.estimator, nan2, nan2, nan2, nan2,
                           0, failed, nan2, nan2, 0)
    est = np.array([r.estimate for r in ok])
    plain = np.array([(r.ci_plain[:, 0] <= truth) & (truth <= r.ci_plain[:, 1]) for r in ok])
    corr = np.array([(r.ci_corrected[:, 0] <= truth) & (truth <= r.ci_corrected[:, 1]) for r in ok])
    keep_mask = np.ones(len(ok), dtype=bool)
    if threshold is not None and first.estimator == "pmhde":
        for i, r in enumerate(ok):
            lo, hi = threshold_bounds(r.reference, *threshold)
            keep_mask[i] = lo <= r.estimate[0] <= hi
    kept = est[keep_mask]
    n_thr = int((~keep_mask).sum())
    cov_kept = [c[keep_mask].mean(axis=0) if keep_mask.any() else nan2 for c in (corr, plain)]

    def se(a):
        return a.std(axis=0, ddof=1) if len(a) > 1 else np.zeros(a.shape[1])

    return CellSummary(
        epsilon=first.epsilon, alpha=first.alpha, estimator=first.estimator,
        mean=kept.mean(axis=0) if len(kept) else nan2, std_error=se(kept) if len(kept) else nan2,
        coverage_corrected=corr.mean(axis=0), coverage_uncorrected=plain.mean(axis=0),
        n_thresholded=n_thr, n_failed=failed, mean_all=est.mean(axis=0), se_all=se(est),
        n_reps=len(ok), coverage_corrected_kept=cov_kept[0], coverage_uncorrected_kept=cov_kept[1],
    )


@dataclass
class SimulationResult:
    config: SimulationConfig
    cells: list[CellSummary]
    replications: list[RepResult] = field(default_factory=list)

    def cell(self, epsilon: float | None = None, alpha: float = 0.0, estimator: str = "pmhde") -> CellSummary:
        for c in self.cells:
            if c.estimator == estimator and c.alpha == alpha and (
                    estimator == "mle" or epsilon is None or c.epsilon == epsilon):
                return c
        raise KeyError((epsilon, alpha, estimator))


def run_simulation(cfg: SimulationConfig, keep_replications: bool = False,
                   keep_traces: bool = False) -> SimulationResult:
    """Run every replication of every cell and aggregate.

    Deterministic for a fixed ``cfg.seed`` regardless of ``cfg.workers``:
    replications own their random streams and are gathered in order.
    """
    jobs = []
    for a_idx in range(len(cfg.alphas)):
        if cfg.reps == 0:
            break
        bw = _cell_bandwidth(cfg, a_idx) if cfg.algo != "mle" else 1.0
        jobs.extend((cfg, a_idx, rep, bw, keep_traces) for rep in range(cfg.reps))
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            per_rep = list(pool.map(_replication_job, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        per_rep = [_replication_job(j) for j in jobs]
    flat = [r for group in per_rep for r in group]

    truth = np.asarray(cfg.true_theta)
    cells = []
    for alpha in cfg.alphas:
        groups: dict[tuple, list[RepResult]] = {}
        for r in flat:
            if r.alpha == alpha:
                key = (r.estimator, -1.0 if r.estimator == "mle" else r.epsilon)
                groups.setdefault(key, []).append(r)
        order = []
        if ("mle", -1.0) in groups:
            order.append(("mle", -1.0))
        order.extend(("pmhde", e) for e in cfg.epsilon_grid if ("pmhde", e) in groups)
        for key in order:
            cells.append(_summarise(groups[key], truth, cfg.threshold))
        for key in order:
            failures = [r for r in groups[key] if r.failed]
            if failures:
                log.warning("%d of %d replications failed in cell %s alpha=%s",
                            len(failures), len(groups[key]), key, alpha)
    return SimulationResult(cfg, cells, flat if (keep_replications or keep_traces) else [])


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v)) if not math.isnan(v) else "nan"


def write_table_csv(result: SimulationResult, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TABLE_HEADER)
    for cell in result.cells:
        for row in cell.rows():
            writer.writerow([_fmt(row[k]) for k in TABLE_HEADER])


def table_csv_text(result: SimulationResult) -> str:
    buf = io.StringIO()
    write_table_csv(result, buf)
    return buf.getvalue()


def write_replications_csv(result: SimulationResult, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REP_HEADER)
    truth = np.asarray(result.config.true_theta)
    for r in result.replications:
        for j, name in enumerate(COORDS):
            if r.failed:
                writer.writerow([r.rep, _fmt(r.epsilon), _fmt(r.alpha), r.estimator, name,
                                 "nan", "nan", "nan", "nan", "nan", 0, 0, 0, 1])
                continue
            thr = 0
            if result.config.threshold is not None and r.reference is not None:
                lo, hi = threshold_bounds(r.reference, *result.config.threshold)
                thr = int(not lo <= r.estimate[0] <= hi)
            cov = int(r.ci_plain[j, 0] <= truth[j] <= r.ci_plain[j, 1])
            cov_c = int(r.ci_corrected[j, 0] <= truth[j] <= r.ci_corrected[j, 1])
            writer.writerow([r.rep, _fmt(r.epsilon), _fmt(r.alpha), r.estimator, name,
                             _fmt(r.estimate[j]), _fmt(r.ci_plain[j, 0]), _fmt(r.ci_plain[j, 1]),
                             _fmt(r.ci_corrected[j, 0]), _fmt(r.ci_corrected[j, 1]), cov, cov_c, thr, 0])


def write_traces_csv(result: SimulationResult, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(("epsilon", "alpha") + TRACE_HEADER)
    for r in result.replications:
        if r.trace is None:
            continue
        for it, row in enumerate(r.trace):
            writer.writerow([_fmt(r.epsilon), _fmt(r.alpha), r.rep, it] + [_fmt(v) for v in row])


def coverage_curve(cfg: SimulationConfig, sizes: Iterable[int], epsilon: float = 0.6) -> list[dict]:
    """Coverage of ``mu`` against sample size, for plotting."""
    rows = []
    for n in sizes:
        res = run_simulation(replace(cfg, n=int(n), epsilon_grid=(epsilon,), alphas=(0.0,), include_mle=False))
        if not res.cells:
            continue
        c = res.cells[0]
        rows.append({"n": int(n), "coverage_corrected": float(c.coverage_corrected[0]),
                     "coverage_uncorrected": float(c.coverage_uncorrected[0])})
    return rows


# ---------------------------------------------------------------------------
# presets and config files

_CONTAM = (0.0, 0.05, 0.1, 0.2, 0.3)
_THRESH = (0.007, 0.995)


def _preset_table() -> dict[str, dict]:
    presets = {
        "table1": dict(algo="gd", n=1000),
        "table2": dict(algo="nr", n=1000),
        "table3": dict(algo="gd", n=1000, lam=1.0, epsilon_grid=(math.inf, 1.2, 0.4)),
        "table4": dict(algo="nr", n=1000, lam=1.0, epsilon_grid=(math.inf, 1.2, 0.4)),
        "table5": dict(algo="gd", n=1000, alphas=_CONTAM, include_mle=True),
        "table6": dict(algo="nr", n=1000, alphas=_CONTAM, include_mle=True),
        "tableA7": dict(algo="gd", n=1000, lam=-0.1, epsilon_grid=(math.inf, 1.2, 0.4)),
        "tableA8": dict(algo="nr", n=1000, lam=-0.1, epsilon_grid=(math.inf, 1.2, 0.4)),
        "tableA9": dict(algo="gd", n=1000, lam=0.5, epsilon_grid=(math.inf, 1.2, 0.4)),
        "tableA10": dict(algo="nr", n=1000, lam=0.5, epsilon_grid=(math.inf, 1.2, 0.4)),
    }
    num = 11
    for n in (200, 300, 500):
        presets[f"tableA{num}"] = dict(algo="gd", n=n, threshold=_THRESH)
        presets[f"tableA{num + 1}"] = dict(algo="nr", n=n, threshold=_THRESH)
        presets[f"tableA{num + 2}"] = dict(algo="gd", n=n, alphas=_CONTAM, include_mle=True, threshold=_THRESH)
        presets[f"tableA{num + 3}"] = dict(algo="nr", n=n, alphas=_CONTAM, include_mle=True, threshold=_THRESH)
        num += 4
    return presets


PRESETS = _preset_table()


def preset_config(name: str, **overrides) -> SimulationConfig:
    try:
        base = dict(PRESETS[name])
    except KeyError:
        raise DomainError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    base.update({k: v for k, v in overrides.items() if v is not None})
    return SimulationConfig(**base)


class ConfigError(ValueError):
    """Invalid configuration file entry, with its location."""


_TUPLE_FIELDS = {"true_theta", "epsilon_grid", "alphas", "contamination_interval", "threshold"}


def _convert(name: str, text: str):
    text = text.strip()
    if name in _TUPLE_FIELDS:
        if text.lower() in ("", "none"):
            return None
        return tuple(float(v) for v in text.replace(";", ",").split(","))
    if name in ("n", "reps", "seed", "workers", "mc_factor"):
        return int(text)
    if name == "K":
        return None if text.lower() in ("", "none", "auto") else int(text)
    if name == "bandwidth":
        return None if text.lower() in ("", "none", "auto") else float(text)
    if name in ("eta", "p", "lam", "level", "noise_floor"):
        return float(text)
    if name in ("include_mle", "weak"):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines. ``preset`` names a base; lists are comma separated."""
    known = {f.name for f in fields(SimulationConfig)} | {"preset"}
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown field {key!r}")
        try:
            out[key] = value if key == "preset" else _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from None
    return out


def load_config(path: str | Path, **overrides) -> SimulationConfig:
    """Read a config file; keyword overrides (e.g. from the command line) win."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
    preset = values.pop("preset", None)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        if preset is not None:
            return preset_config(preset, **values)
        return SimulationConfig(**values)
    except (DomainError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def config_dict(cfg: SimulationConfig) -> dict:
    return asdict(cfg)
