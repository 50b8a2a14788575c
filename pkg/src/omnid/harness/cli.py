"""Command-line entry points.

Exit codes: 0 success, 1 validation error, 2 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..episodes import PackFormatError, inspect_header, write_pack
from ..synthworld import ScenarioSpec, default_rig, generate_pack
from ..tensorgrad import CheckpointError, NumericError
from .config import ConfigError, RunConfig, desk_profile, load_config
from .evaluate import SCENARIOS, evaluate
from .gradcheck import SCOPES, run_scope
from .models import resolve_rig
from .train import finetune, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2


def _cmd_gen_data(args) -> int:
    spec = ScenarioSpec.load(args.spec)
    cfg = load_config(args.config) if args.config else desk_profile()
    rig = resolve_rig(cfg)
    pack, retries = generate_pack(spec, rig)
    write_pack(args.out, pack)
    if args.rig_out:
        from ..geometry import save_rig
        save_rig(args.rig_out, rig)
    print(f"wrote {args.out}: {len(pack.episodes)} episodes "
          f"({sum(pack.lengths)} steps, {retries} expert retries)")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    result = train(cfg, args.out, seed=args.seed, log=print)
    print(f"checkpoint: {result.checkpoint}")
    print(f"loss curve: {result.curve} (final loss {result.final_loss:.4f})")
    return EXIT_OK


def _cmd_eval(args) -> int:
    report = evaluate(args.ckpt, args.scenario, episodes=args.episodes,
                      base_seed=args.seed, max_steps=args.max_steps,
                      workers=args.workers, policy_kind=args.policy,
                      inference_steps=args.inference_steps)
    text = report.to_json()
    if args.report:
        Path(args.report).write_text(text)
    print(text)
    return EXIT_OK


def _cmd_finetune(args) -> int:
    cfg = load_config(args.config)
    result = finetune(args.ckpt, args.pack, cfg, args.out, seed=args.seed,
                      steps=args.steps)
    print(f"fine-tuned checkpoint: {result.checkpoint}")
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    passed, rows = run_scope(args.scope)
    for row in rows:
        mark = "ok  " if row.passed else "FAIL"
        print(f"[{mark}] {row.scope:8s} {row.name:40s} "
              f"max rel err {row.max_rel_err:.3e} (tol {row.tolerance:.0e})")
    if not passed:
        print(f"gradcheck scope '{args.scope}' FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"gradcheck scope '{args.scope}' passed ({len(rows)} checks)")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    print(json.dumps(inspect_header(args.pack), indent=1))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omnid",
        description="Multi-view BEV fusion diffusion policy, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate expert demonstrations")
    p.add_argument("--spec", required=True, help="scenario spec JSON")
    p.add_argument("--out", required=True, help="output pack path")
    p.add_argument("--config", default="", help="config file (camera/image setup)")
    p.add_argument("--rig-out", default="", help="also write the rig JSON here")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="closed-loop evaluation")
    p.add_argument("--ckpt", default="")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--report", default="")
    p.add_argument("--seed", type=int, default=1000)
    p.add_argument("--max-steps", type=int, default=60)
    p.add_argument("--workers", type=int, default=0)
    p.add_argument("--policy", default="checkpoint",
                   choices=("checkpoint", "random", "expert"))
    p.add_argument("--inference-steps", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("finetune", help="adapt a checkpoint to a new pack")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pack", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("gradcheck", help="finite-difference verification")
    p.add_argument("--scope", required=True, choices=SCOPES)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("inspect", help="print a pack header as JSON")
    p.add_argument("--pack", required=True)
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, PackFormatError, ValueError,
            KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
