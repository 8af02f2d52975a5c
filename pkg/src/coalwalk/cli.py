"""Command-line entry point.

Usage::

    coalwalk <experiment> --config cfg.json [--out DIR] [--workers N] [--seed S]

where experiment is one of meanfield | counterexample | envelope | duality |
correlation | diagnostics.  Exit codes: 0 all acceptance flags pass, 1 some
flag failed, 2 configuration or budget error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import BudgetExceededError, ConfigError
from .harness import EXPERIMENTS, run_experiment


def build_parser():
    parser = argparse.ArgumentParser(
        prog="coalwalk",
        description="Coalescing-random-walk experiments with exact oracles",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="path to a JSON config file")
        p.add_argument("--out", default=None, help="output directory for report + CSVs")
        p.add_argument("--workers", type=int, default=None, help="parallel workers")
        p.add_argument("--seed", type=int, default=None, help="base seed override")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    if not isinstance(config, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return 2
    config.setdefault("experiment", args.experiment)
    if config["experiment"] != args.experiment:
        print(
            f"error: config experiment {config['experiment']!r} does not match "
            f"subcommand {args.experiment!r}",
            file=sys.stderr,
        )
        return 2
    try:
        report = run_experiment(
            config, out_dir=args.out, workers=args.workers, seed=args.seed
        )
    except (ConfigError, BudgetExceededError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for name, ok in sorted(report.flags.items()):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    for key in sorted(report.metrics):
        value = report.metrics[key]
        if isinstance(value, float):
            print(f"  {key} = {value:.6g}")
        elif not isinstance(value, (list, dict)):
            print(f"  {key} = {value}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
