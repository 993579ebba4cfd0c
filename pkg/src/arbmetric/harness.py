"""Data generation and seeded Monte Carlo experiments.

Every trial is reproducible from a single integer seed that is derived from
``(master_seed, point_index, trial_index)``; the matrix, the signal and the
measurement noise use three independent children of that seed.  Results are
written as CSV with floats in ``repr`` form so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import CosampOptions, cosamp
from .errors import ConfigError, DomainError, GampDiverged
from .estimators import MetricOptimal, apply_estimator, parse_estimator
from .gamp import GampOptions, gamp_run
from .limits import LimitQuery, mmae_limit, mmsue_limit
from .model import (
    AWGN,
    Absolute,
    Poisson,
    SparseGaussian,
    SparseWeibull,
    SupportXor,
    Tabulated,
    eval_linf,
    eval_metric,
    parse_metric,
)
from .posterior import ScalarChannelOutput

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "TrialRecord",
    "gen_matrix",
    "sample_signal",
    "sample_channel",
    "preset_config",
    "PRESETS",
    "run_experiment",
    "run_trial",
    "trial_seed",
    "prior_from_dict",
    "channel_from_dict",
    "prior_to_dict",
    "channel_to_dict",
]

PRESETS = ("fig3", "fig4", "fig5a", "fig5b", "fig6")
DEFAULT_RATIOS = (0.2, 0.3, 0.4, 0.5, 0.6)
GAMP_ESTIMATES = "relaxed-bp"
LIMIT_ESTIMATOR = "limit"


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_matrix(m, n, seed):
    """M x N matrix of {0, 1} coin flips with each row scaled to unit norm."""
    if m < 1 or n < 1:
        raise DomainError("matrix dimensions must be positive")
    rng = _rng(seed)
    phi = (rng.random((m, n)) < 0.5).astype(float)
    counts = phi.sum(axis=1)
    while np.any(counts == 0):
        empty = np.flatnonzero(counts == 0)
        phi[empty] = (rng.random((empty.size, n)) < 0.5).astype(float)
        counts = phi.sum(axis=1)
    return phi / np.sqrt(counts)[:, None]


def sample_signal(prior, n, seed):
    return prior.sample(_rng(seed), n)


def sample_channel(channel, w, seed):
    return channel.sample(_rng(seed), w)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def prior_from_dict(d):
    d = dict(d)
    kind = str(d.pop("type", "")).lower()
    try:
        if kind in ("sparse-gaussian", "sparse_gaussian", "gaussian"):
            return SparseGaussian(**d)
        if kind in ("sparse-weibull", "sparse_weibull", "weibull"):
            return SparseWeibull(**d)
        if kind == "tabulated":
            return Tabulated(d.pop("atom"), tuple(d.pop("points")), tuple(d.pop("weights")), **d)
    except (TypeError, KeyError, DomainError) as exc:
        raise ConfigError(f"bad prior fields: {exc}") from None
    raise ConfigError(f"unknown prior type {kind!r}")


def channel_from_dict(d):
    d = dict(d)
    kind = str(d.pop("type", "")).lower()
    try:
        if kind == "awgn":
            return AWGN(**d)
        if kind == "poisson":
            return Poisson(**d)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"bad channel fields: {exc}") from None
    raise ConfigError(f"unknown channel type {kind!r}")


def prior_to_dict(prior):
    kind = {SparseGaussian: "sparse-gaussian", SparseWeibull: "sparse-weibull", Tabulated: "tabulated"}
    d = asdict(prior)
    if isinstance(prior, Tabulated):
        d = {"atom": prior.atom, "points": list(prior.points), "weights": list(prior.weights)}
    return {"type": kind[type(prior)], **d}


def channel_to_dict(channel):
    return {"type": "awgn" if isinstance(channel, AWGN) else "poisson", **asdict(channel)}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a grid of (N, M/N) points times a number of trials.

    ``sizes`` lists signal lengths to sweep; when empty the single ``n`` is
    used.  Estimator strings are those of
    :func:`~arbmetric.estimators.parse_estimator` plus ``metric-optimal``
    (matched to each reported metric), ``relaxed-bp`` (GAMP posterior mean)
    and ``cosamp[:K]``.
    """

    preset: str = "custom"
    n: int = 2000
    measurement_ratios: tuple = DEFAULT_RATIOS
    prior: object = SparseGaussian(0.03, 1.0)
    channel: object = AWGN(3e-4)
    estimators: tuple = ("metric-optimal", "relaxed-bp", "cosamp")
    metrics_reported: tuple = ("mae",)
    trials: int = 1
    master_seed: int = 0
    output_path: str | None = None
    sizes: tuple = ()
    gamp_iterations: int = 20
    limits: bool = False

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.measurement_ratios:
            raise ConfigError("measurement_ratios must not be empty")
        for r in self.measurement_ratios:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"measurement ratio {r} outside (0, 1]")
        for n in (self.n, *self.sizes):
            if int(n) < 1:
                raise ConfigError("signal length must be positive")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        for name in self.metrics_reported:
            if name != "linf":
                try:
                    parse_metric(name)
                except DomainError as exc:
                    raise ConfigError(str(exc)) from None
        for est in self.estimators:
            _check_estimator(est)
        object.__setattr__(self, "measurement_ratios", tuple(float(r) for r in self.measurement_ratios))
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "metrics_reported", tuple(self.metrics_reported))

    def points(self):
        """(N, M) pairs in sweep order."""
        sizes = self.sizes or (self.n,)
        return [(n, max(1, int(round(r * n)))) for n in sizes for r in self.measurement_ratios]

    def to_dict(self):
        d = asdict(self)
        d["prior"] = prior_to_dict(self.prior)
        d["channel"] = channel_to_dict(self.channel)
        for key in ("measurement_ratios", "estimators", "metrics_reported", "sizes"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        allowed = set(cls.__dataclass_fields__)
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        d = dict(d)
        if "prior" in d:
            d["prior"] = prior_from_dict(d["prior"])
        if "channel" in d:
            d["channel"] = channel_from_dict(d["channel"])
        for key in ("measurement_ratios", "estimators", "metrics_reported", "sizes"):
            if key in d:
                if not isinstance(d[key], (list, tuple)):
                    raise ConfigError(f"{key} must be a list")
                d[key] = tuple(d[key])
        try:
            return cls(**d)
        except (TypeError, DomainError) as exc:
            raise ConfigError(str(exc)) from None


def _check_estimator(name):
    if name in ("metric-optimal", GAMP_ESTIMATES):
        return
    if name.startswith("cosamp"):
        _cosamp_k(name, 1, 0.0)
        return
    try:
        parse_estimator(name)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _cosamp_k(name, n, sparsity):
    if name == "cosamp":
        return int(round(sparsity * n))
    head, _, k = name.partition(":")
    if head != "cosamp" or not k.isdigit():
        raise ConfigError(f"bad CoSaMP estimator {name!r}")
    return int(k)


def preset_config(name, full_scale=False, **overrides):
    """Configuration for one of the figure presets; ``overrides`` replace fields."""
    fig3_model = dict(prior=SparseGaussian(0.03, 1.0), channel=AWGN(3e-4))
    n = 10_000 if full_scale else 2000
    if name == "fig3":
        cfg = ExperimentConfig(
            preset=name, n=n, **fig3_model,
            estimators=("metric-optimal", "relaxed-bp", "cosamp"),
            metrics_reported=("mae", "error_0.5", "error_1.5"),
            trials=100 if full_scale else 50,
        )
    elif name == "fig4":
        cfg = ExperimentConfig(
            preset=name, n=n, prior=SparseWeibull(0.03, 1.0, 0.5), channel=Poisson(100.0),
            estimators=("metric-optimal", "relaxed-bp", "cosamp"),
            metrics_reported=("mae", "error_0.5", "error_1.5"),
            trials=100 if full_scale else 50,
        )
    elif name == "fig5a":
        cfg = ExperimentConfig(
            preset=name, n=n, **fig3_model,
            estimators=("metric-optimal",), metrics_reported=("mae",),
            trials=40 if full_scale else 20, limits=True,
        )
    elif name == "fig5b":
        cfg = ExperimentConfig(
            preset=name, n=n, **fig3_model,
            estimators=("metric-optimal", "support-threshold"), metrics_reported=("support",),
            trials=40 if full_scale else 20, limits=True,
        )
    elif name == "fig6":
        cfg = ExperimentConfig(
            preset=name, n=1000, prior=SparseGaussian(0.05, 1.0), channel=AWGN(5e-4),
            measurement_ratios=(0.3,),
            sizes=(500, 1000, 2000, 5000, 10_000, 20_000) if full_scale else (500, 1000, 2000, 5000),
            estimators=("wiener-linf", "lp:5", "lp:10", "lp:15"), metrics_reported=("linf",),
            trials=100 if full_scale else 10,
        )
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if "n" in overrides and cfg.sizes and name == "fig6":
        overrides.setdefault("sizes", (overrides["n"],))
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialRecord:
    preset: str
    point_index: int
    trial_index: int
    seed: int
    M: int
    N: int
    estimator: str
    metric: str
    error_value: float
    diverged: bool
    gamp_mu: float
    wall_time: float = field(default=0.0, compare=False)


CSV_FIELDS = (
    "preset", "point_index", "trial_index", "seed", "M", "N",
    "estimator", "metric", "error_value", "diverged", "gamp_mu",
)


def trial_seed(master_seed, point_index, trial_index):
    """64-bit seed of one trial, independent of execution order."""
    ss = np.random.SeedSequence([int(master_seed), int(point_index), int(trial_index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _score(metric_name, xhat, x):
    if metric_name == "linf":
        return eval_linf(xhat, x)
    return eval_metric(parse_metric(metric_name), xhat, x)


def run_trial(config, point_index, trial_index):
    """All records of one trial, in (estimator, metric) configuration order."""
    n, m = config.points()[point_index]
    seed = trial_seed(config.master_seed, point_index, trial_index)
    s_matrix, s_signal, s_noise = np.random.SeedSequence(seed).spawn(3)
    phi = gen_matrix(m, n, s_matrix)
    x = sample_signal(config.prior, n, s_signal)
    y = sample_channel(config.channel, phi @ x, s_noise)

    t0 = time.perf_counter()
    try:
        gout = gamp_run(phi, y, config.prior, config.channel, GampOptions(max_iterations=config.gamp_iterations))
        diverged = False
    except GampDiverged:
        gout = None
        diverged = True
    gamp_time = time.perf_counter() - t0
    mu = gout.mu if gout is not None else math.nan
    sco = ScalarChannelOutput(gout.q, gout.mu) if gout is not None else None

    records = []

    def add(estimator, metric, value, elapsed):
        records.append(
            TrialRecord(
                config.preset, point_index, trial_index, seed, m, n, estimator, metric,
                float(value), diverged, float(mu), elapsed,
            )
        )

    for est in config.estimators:
        if est.startswith("cosamp"):
            t0 = time.perf_counter()
            xhat = cosamp(phi, y, CosampOptions(_cosamp_k(est, n, config.prior.sparsity)))
            elapsed = time.perf_counter() - t0
            for metric in config.metrics_reported:
                add(est, metric, _score(metric, xhat, x), elapsed)
            continue
        if diverged:
            for metric in config.metrics_reported:
                add(est, metric, math.nan, 0.0)
            continue
        if est == GAMP_ESTIMATES:
            for metric in config.metrics_reported:
                add(est, metric, _score(metric, gout.x_mmse, x), gamp_time)
            continue
        if est == "metric-optimal":
            for metric in config.metrics_reported:
                if metric == "linf":
                    continue
                t0 = time.perf_counter()
                xhat = apply_estimator(MetricOptimal(parse_metric(metric)), sco, config.prior)
                add(est, metric, _score(metric, xhat, x), time.perf_counter() - t0 + gamp_time)
            continue
        t0 = time.perf_counter()
        xhat = apply_estimator(est, sco, config.prior)
        elapsed = time.perf_counter() - t0 + gamp_time
        for metric in config.metrics_reported:
            add(est, metric, _score(metric, xhat, x), elapsed)

    if config.limits:
        for metric in config.metrics_reported:
            value = _limit_value(config.prior, metric, mu, n) if not diverged else math.nan
            add(LIMIT_ESTIMATOR, metric, value, 0.0)
    return records


def _limit_value(prior, metric_name, mu, n):
    metric = parse_metric(metric_name) if metric_name != "linf" else None
    if isinstance(metric, Absolute):
        return mmae_limit(LimitQuery(prior, mu, n=n))
    if isinstance(metric, SupportXor) and isinstance(prior, SparseGaussian):
        return mmsue_limit(prior.sparsity, prior.variance, mu, n)
    return math.nan


def _run_job(args):
    config, point_index, trial_index = args
    return run_trial(config, point_index, trial_index)


# ---------------------------------------------------------------------------
# aggregation and output
# ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    aggregates: list
    diverged_trials: int
    total_trials: int
    paths: dict = field(default_factory=dict)

    @property
    def summary(self):
        return (
            f"{self.config.preset}: {self.total_trials} trials, "
            f"{self.diverged_trials} diverged (excluded from aggregates)"
        )

    @property
    def all_points_diverged(self):
        return any(a["count"] == 0 for a in self.aggregates)


def _aggregate(config, records):
    groups = {}
    diverged_counts = {}
    for r in records:
        key = (r.point_index, r.estimator, r.metric)
        groups.setdefault(key, [])
        diverged_counts.setdefault(r.point_index, set())
        if r.diverged:
            diverged_counts[r.point_index].add(r.trial_index)
            continue
        if math.isfinite(r.error_value):
            groups[key].append(r.error_value)
    points = config.points()
    out = []
    for (p, est, metric), vals in groups.items():
        n, m = points[p]
        k = len(vals)
        mean = math.fsum(vals) / k if k else math.nan
        if k > 1:
            var = math.fsum((v - mean) ** 2 for v in vals) / (k - 1)
            stderr = math.sqrt(var / k)
        else:
            stderr = math.nan
        out.append(
            {
                "preset": config.preset, "point_index": p, "M": m, "N": n,
                "ratio": config.measurement_ratios[p % len(config.measurement_ratios)],
                "estimator": est, "metric": metric, "mean": mean, "stderr": stderr,
                "count": k, "diverged_trials": len(diverged_counts[p]),
            }
        )
    return out


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return str(v)


def _write_csv(path, fields, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_fmt(row[f]) for f in fields])


def _figure_rows(config, aggregates):
    columns = []
    table = {}
    for a in aggregates:
        col = f"{a['metric']}:{a['estimator']}"
        if col not in columns:
            columns.append(col)
        table.setdefault(a["point_index"], {"point_index": a["point_index"], "N": a["N"], "M": a["M"], "ratio": a["ratio"]})
        table[a["point_index"]][col] = a["mean"]
    rows = [table[p] for p in sorted(table)]
    for row in rows:
        for col in columns:
            row.setdefault(col, math.nan)
    return ["point_index", "N", "M", "ratio", *columns], rows


def _svg(config, aggregates, metric):
    rows = [a for a in aggregates if a["metric"] == metric and math.isfinite(a["mean"])]
    if not rows:
        return None
    use_n = bool(config.sizes)
    xs = sorted({a["N"] if use_n else a["ratio"] for a in rows})
    ys = [a["mean"] for a in rows]
    lo, hi = min(ys), max(ys)
    if hi <= lo:
        hi = lo + 1.0
    width, height, pad = 480, 320, 50
    x0, x1 = xs[0], xs[-1] if xs[-1] > xs[0] else xs[0] + 1.0

    def px(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - lo) / (hi - lo) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle">{"N" if use_n else "M/N"}</text>',
        f'<text x="12" y="{pad - 20}">{metric} [{lo:.3g}, {hi:.3g}]</text>',
    ]
    estimators = []
    for a in rows:
        if a["estimator"] not in estimators:
            estimators.append(a["estimator"])
    for i, est in enumerate(estimators):
        pts = sorted((a["N"] if use_n else a["ratio"], a["mean"]) for a in rows if a["estimator"] == est)
        color = colors[i % len(colors)]
        path = " ".join(f"{px(u):.1f},{py(v):.1f}" for u, v in pts)
        parts.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{width - pad + 4}" y="{pad + 16 * i}" fill="{color}" font-size="11">{est}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_outputs(result, out_dir, svg):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    stem = cfg.preset
    paths = {}
    trial_rows = [{f: getattr(r, f) for f in CSV_FIELDS} for r in result.records]
    paths["trials"] = out / f"{stem}_trials.csv"
    _write_csv(paths["trials"], CSV_FIELDS, trial_rows)

    agg_fields = ["preset", "point_index", "M", "N", "ratio", "estimator", "metric", "mean", "stderr", "count", "diverged_trials"]
    paths["aggregate"] = out / f"{stem}_aggregate.csv"
    _write_csv(paths["aggregate"], agg_fields, result.aggregates)

    fig_fields, fig_rows = _figure_rows(cfg, result.aggregates)
    paths["figure"] = out / f"{stem}_figure.csv"
    _write_csv(paths["figure"], fig_fields, fig_rows)

    timing_fields = ["point_index", "trial_index", "estimator", "metric", "wall_time"]
    paths["timings"] = out / f"{stem}_timings.csv"
    _write_csv(paths["timings"], timing_fields, [{f: getattr(r, f) for f in timing_fields} for r in result.records])

    meta = {
        "config": cfg.to_dict(),
        "points": [{"N": n, "M": m} for n, m in cfg.points()],
        "assumptions": [
            "swept quantity is the measurement ratio M/N",
            "matrix entries are {0,1} coin flips with unit-norm rows",
            "cosamp without an explicit K uses K = round(sparsity * N)",
            "trials whose GAMP run diverged are excluded from every aggregate",
        ],
        "diverged_trials": result.diverged_trials,
        "total_trials": result.total_trials,
    }
    paths["meta"] = out / f"{stem}_meta.json"
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    if svg:
        for metric in cfg.metrics_reported:
            text = _svg(cfg, result.aggregates, metric)
            if text is not None:
                p = out / f"{stem}_{metric}.svg"
                p.write_text(text)
                paths[f"svg:{metric}"] = p
    return paths


def run_experiment(config, out_dir=None, workers=1, svg=False):
    """Run every (point, trial) job, aggregate, and optionally write files.

    ``out_dir`` defaults to ``config.output_path``; nothing is written when
    both are ``None``.  Records are ordered by point and trial index no
    matter how many ``workers`` execute them.
    """
    jobs = [(config, p, t) for p in range(len(config.points())) for t in range(config.trials)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_job, jobs))
    else:
        chunks = [_run_job(j) for j in jobs]
    records = [r for chunk in chunks for r in chunk]
    diverged = {(r.point_index, r.trial_index) for r in records if r.diverged}
    result = ExperimentResult(config, records, _aggregate(config, records), len(diverged), len(jobs))
    out_dir = out_dir if out_dir is not None else config.output_path
    if out_dir is not None:
        result.paths = _write_outputs(result, out_dir, svg)
    return result
