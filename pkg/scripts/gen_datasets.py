#!/usr/bin/env python3
"""Generate the standard demonstration packs (ID training, camera-A few-shot)
plus the rig JSON, without training anything.

Usage:
    python scripts/gen_datasets.py --out data/
"""

import argparse
from pathlib import Path

from omnid.geometry import save_rig
from omnid.harness.config import desk_profile, load_config
from omnid.harness.experiment import ensure_packs
from omnid.harness.models import resolve_rig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--config", default="")
    parser.add_argument("--episodes", type=int, default=50)
    parser.add_argument("--seed", type=int, default=11)
    args = parser.parse_args()

    cfg = load_config(args.config) if args.config else desk_profile()
    out = Path(args.out)
    paths = ensure_packs(out, cfg, data_seed=args.seed, episodes=args.episodes,
                         log=print)
    save_rig(out / "rig.json", resolve_rig(cfg))
    for name, path in paths.items():
        print(f"{name}: {path}")
    print(f"rig: {out / 'rig.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
