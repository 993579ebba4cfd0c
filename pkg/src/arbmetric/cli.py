"""Command-line entry point: ``estimate``, ``experiment`` and ``limits``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace

from .errors import ConfigError, DegeneratePriorError, DomainError, GampDiverged
from .harness import PRESETS, ExperimentConfig, preset_config, run_experiment, run_trial
from .limits import LimitQuery, mmae_limit, mmsue_limit, mmue_limit
from .model import Absolute, SparseGaussian, SupportXor, parse_metric

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    return ExperimentConfig.from_dict(data)


def cmd_estimate(args):
    config = replace(_load_config(args.config), trials=1)
    records = run_trial(config, 0, 0)
    n, m = config.points()[0]
    print(f"N={n} M={m} seed={records[0].seed if records else ''}")
    for r in records:
        value = "diverged" if not math.isfinite(r.error_value) else repr(r.error_value)
        print(f"{r.estimator}\t{r.metric}\t{value}")
    if records and records[0].diverged:
        print("GAMP diverged; GAMP-based estimates are unavailable", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_experiment(args):
    config = preset_config(args.preset, full_scale=args.full_scale, n=args.n, trials=args.trials, master_seed=args.seed)
    result = run_experiment(config, out_dir=args.out, workers=args.workers, svg=args.svg)
    print(result.summary)
    for path in result.paths.values():
        print(path)
    return EXIT_DIVERGED if result.all_points_diverged else EXIT_OK


def cmd_limits(args):
    metric = args.metric.lower()
    if metric == "linf":
        raise ConfigError("no limit is available for the linf metric")
    prior = SparseGaussian(args.s, args.sigma2)
    m = parse_metric(metric)
    if isinstance(m, SupportXor):
        value = mmsue_limit(args.s, args.sigma2, args.mu, args.n)
    elif isinstance(m, Absolute):
        value = mmae_limit(LimitQuery(prior, args.mu, n=args.n))
    else:
        value = mmue_limit(LimitQuery(prior, args.mu, m, n=args.n))
    print(repr(float(value)))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="arbmetric", description="Metric-optimal sparse reconstruction")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="one reconstruction from a JSON configuration")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("experiment", help="run a figure preset and write CSV files")
    p.add_argument("--preset", required=True, choices=PRESETS)
    p.add_argument("--n", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--svg", action="store_true", help="also write one SVG line plot per metric")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("limits", help="evaluate a theoretical limit for a sparse Gaussian prior")
    p.add_argument("--metric", required=True)
    p.add_argument("--s", type=float, required=True)
    p.add_argument("--sigma2", type=float, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--n", type=int, default=1)
    p.set_defaults(func=cmd_limits)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, DegeneratePriorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GampDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
