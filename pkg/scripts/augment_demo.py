#!/usr/bin/env python3
"""One-shot demo: fixture dataset -> bank -> augment -> eval -> report.

Everything runs on the deterministic reference backends, so the demo
needs no services and finishes in seconds.

    python scripts/augment_demo.py --out /tmp/demo --seed 7
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
from make_fixture_dataset import make_fixture  # noqa: E402

from saic import runner  # noqa: E402
from saic.config import RunConfig  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--images", type=int, default=16)
    parser.add_argument("--expand-ratio", type=float, default=0.75)
    args = parser.parse_args()

    out = Path(args.out)
    dataset_path = make_fixture(out / "fixture", args.images, 96, 3, args.seed)
    config = RunConfig(
        seed=args.seed,
        dataset_path=str(dataset_path),
        bank_dir=str(out / "bank"),
        output_dir=str(out / "run"),
        embed_dim=96,
        min_per_category=4,
        max_per_category=8,
        expand_ratio=args.expand_ratio,
    )
    info = runner.run_build_bank(config)
    print(f"bank: {info['records']} records {info['per_category']}")
    summary = runner.run_augment(config)
    print(
        f"augment: {summary.total - summary.failed}/{summary.total} ok, "
        f"{summary.background_kept} background_style / {summary.self_kept} self_style kept"
    )
    runner.run_eval(config)
    print(runner.run_report(config))


if __name__ == "__main__":
    main()
