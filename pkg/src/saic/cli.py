"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure (backend trouble, too many
entry failures, missing run artifacts), 2 bad invocation or malformed
config/dataset input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from . import runner
from .config import BACKENDS, load_config
from .errors import ParseError, SaicError, SchemaError

COMMANDS = ("build-bank", "plan", "augment", "filter", "eval", "report")
FAILURE_BUDGET = 0.10  # beyond this fraction of failed entries the run is declared bad


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saic",
        description=(
            "Training-free cytology augmentation: compose banked abnormal cells "
            "into annotated backgrounds, judge the styled variants, evaluate."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "build-bank": "sample annotated cells into a reusable bank",
        "plan": "choose composition targets and write plan.json",
        "augment": "run the full compose + judge pipeline into the output dir",
        "filter": "re-run judging over an existing run's pairs",
        "eval": "compute synthesis-quality metrics for a finished run",
        "report": "print a human summary of a finished run",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", required=True, help="path to a JSON or YAML run config")
        sp.add_argument("--backend", choices=BACKENDS, help="override config backend")
        sp.add_argument("--workers", type=int, help="override config worker count")
        sp.add_argument("--seed", type=int, help="override config master seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        overrides = {
            key: getattr(args, key)
            for key in ("backend", "workers", "seed")
            if getattr(args, key) is not None
        }
        if overrides:
            config = dataclasses.replace(config, **overrides)
    except (ParseError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "build-bank":
            info = runner.run_build_bank(config)
            print(f"bank: {info['records']} records -> {info['bank_dir']}")
        elif args.command == "plan":
            info = runner.run_plan(config)
            print(f"plan: {info['entries']} entries -> {info['plan']}")
        elif args.command == "augment":
            summary = runner.run_augment(config)
            print(
                f"augment: {summary.total - summary.failed}/{summary.total} entries ok, "
                f"{summary.background_kept} background_style + {summary.self_kept} self_style "
                f"kept -> {summary.output_dir}"
            )
            if summary.failure_fraction > FAILURE_BUDGET:
                print(
                    f"error: {summary.failed}/{summary.total} entries failed "
                    f"(> {FAILURE_BUDGET:.0%} budget); see failures.jsonl",
                    file=sys.stderr,
                )
                return 1
        elif args.command == "filter":
            info = runner.run_filter(config)
            print(
                f"filter: {info['background_kept']}/{info['total']} background_style, "
                f"{info['self_kept']}/{info['total']} self_style"
            )
        elif args.command == "eval":
            report = runner.run_eval(config)
            print(json.dumps(report, sort_keys=True, indent=2))
        elif args.command == "report":
            print(runner.run_report(config))
    except (ParseError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SaicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
