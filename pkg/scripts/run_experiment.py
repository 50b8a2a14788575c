#!/usr/bin/env python3
"""Run the full training/evaluation campaign and print the summary table.

Usage:
    python scripts/run_experiment.py --workdir runs/campaign
    python scripts/run_experiment.py --workdir runs/quick --seeds 1 --steps 600
"""

import argparse
import json
from pathlib import Path

from omnid.harness.config import desk_profile, load_config
from omnid.harness.experiment import run_campaign


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", required=True)
    parser.add_argument("--config", default="", help="config file (default: desk profile)")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4])
    parser.add_argument("--steps", type=int, default=0, help="override training steps")
    parser.add_argument("--episodes", type=int, default=50)
    parser.add_argument("--workers", type=int, default=0)
    parser.add_argument("--variants", nargs="+", default=["ofg", "concat"],
                        choices=["ofg", "concat"])
    args = parser.parse_args()

    cfg = load_config(args.config) if args.config else desk_profile()
    if args.steps:
        cfg.train.steps = args.steps
    summary = run_campaign(args.workdir, cfg, seeds=tuple(args.seeds),
                           episodes=args.episodes, workers=args.workers,
                           variants=tuple(args.variants))

    print("\n=== success rates (mean over seeds) ===")
    for variant, metrics in summary["results"].items():
        row = "  ".join(f"{k}: {v['mean']:.0%}" for k, v in metrics.items())
        print(f"{variant:8s} {row}")
    print(f"\nper-seed detail: {Path(args.workdir) / 'summary.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
