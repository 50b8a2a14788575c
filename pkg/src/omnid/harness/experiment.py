"""Full evaluation campaign: trains the deformable-fusion policy and the
concat-fusion control across seeds, evaluates in-distribution, position
out-of-distribution, and held-out-camera fine-tuning, and writes one summary
JSON with per-seed values.

Everything is seeded and cached by (variant, seed): re-running an interrupted
campaign reuses finished checkpoints and reports.
"""

from __future__ import annotations

import copy
import json
import os
import time
from pathlib import Path

from .. import synthworld as sw
from ..episodes import write_pack
from .config import RunConfig, config_hash, desk_profile, dump_config
from .evaluate import EvalReport, evaluate
from .models import resolve_rig
from .train import finetune, train

VARIANTS = ("ofg", "concat")


def ensure_packs(workdir: Path, cfg: RunConfig, data_seed: int = 11,
                 episodes: int = 50, log=None) -> dict[str, str]:
    """Generate (once) the ID training pack and the camera-A few-shot pack."""
    workdir.mkdir(parents=True, exist_ok=True)
    rig = resolve_rig(cfg)
    paths = {"id_train": workdir / "id_train.omne",
             "cam_a": workdir / "cam_a_finetune.omne"}
    if not paths["id_train"].exists():
        t0 = time.perf_counter()
        pack, retries = sw.generate_pack(
            sw.ScenarioSpec("id", 0, "BCDE", episodes, seed=data_seed), rig)
        write_pack(paths["id_train"], pack)
        if log:
            log(f"generated ID pack: {episodes} episodes, {retries} retries, "
                f"{time.perf_counter() - t0:.0f}s")
    if not paths["cam_a"].exists():
        pack, _ = sw.generate_pack(
            sw.ScenarioSpec("id", 0, "A", sw.FINETUNE_EPISODES, seed=data_seed + 10),
            rig)
        write_pack(paths["cam_a"], pack)
    return {k: str(v) for k, v in paths.items()}


def _cached_eval(ckpt: str | None, scenario: str, report_path: Path,
                 episodes: int, workers: int, max_steps: int,
                 policy_kind: str = "checkpoint") -> EvalReport:
    if report_path.exists():
        return EvalReport.from_json(report_path.read_text())
    report = evaluate(ckpt, scenario, episodes=episodes, workers=workers,
                      max_steps=max_steps, policy_kind=policy_kind)
    report_path.write_text(report.to_json())
    return report


def run_campaign(workdir: str | Path, cfg: RunConfig | None = None,
                 seeds=(1, 2, 3, 4), episodes: int = 50, workers: int = 0,
                 variants=VARIANTS, log=print) -> dict:
    """Train + evaluate every (variant, seed); returns the summary dict."""
    workdir = Path(workdir)
    cfg = cfg or desk_profile()
    packs = ensure_packs(workdir, cfg, log=log)
    cfg.data.train_pack = packs["id_train"]
    started = time.perf_counter()

    summary: dict = {
        "config_hash": config_hash(cfg),
        "seeds": list(seeds),
        "episodes": episodes,
        "train_steps": cfg.train.steps,
        "results": {},
        "timings": {},
    }

    control_path = workdir / "report_random_id.json"
    control = _cached_eval(None, "id", control_path, episodes, workers,
                           cfg.eval.max_steps, policy_kind="random")
    summary["results"]["random"] = {"id": {"mean": control.success_rate,
                                           "per_seed": [control.success_rate]}}
    if log:
        log(f"random-policy control: {control.success_rate:.0%}")

    for variant in variants:
        rates: dict[str, list[float]] = {"id": [], "pos-ood": [], "cam-a-ft": []}
        for seed in seeds:
            tag = f"{variant}_s{seed}"
            run_cfg = copy.deepcopy(cfg)
            run_cfg.model.fusion = variant
            run_dir = workdir / f"train_{tag}"
            ckpt = run_dir / "policy.omnd"
            t0 = time.perf_counter()
            if not ckpt.exists():
                train(run_cfg, run_dir, seed=seed,
                      log=(lambda m: log(f"[{tag}] {m}")) if log else None)
            summary["timings"][f"train_{tag}"] = time.perf_counter() - t0

            for scenario, key in (("id", "id"), ("pos-ood", "pos-ood")):
                t0 = time.perf_counter()
                rep = _cached_eval(str(ckpt), scenario,
                                   workdir / f"report_{tag}_{scenario}.json",
                                   episodes, workers, cfg.eval.max_steps)
                rates[key].append(rep.success_rate)
                summary["timings"][f"eval_{tag}_{scenario}"] = time.perf_counter() - t0
                if log:
                    log(f"[{tag}] {scenario}: {rep.success_rate:.0%}")

            ft_dir = workdir / f"finetune_{tag}"
            ft_ckpt = ft_dir / "policy.omnd"
            t0 = time.perf_counter()
            if not ft_ckpt.exists():
                finetune(str(ckpt), packs["cam_a"], run_cfg, ft_dir, seed=seed)
            rep = _cached_eval(str(ft_ckpt), "cam-a",
                               workdir / f"report_{tag}_cam-a.json",
                               episodes, workers, cfg.eval.max_steps)
            rates["cam-a-ft"].append(rep.success_rate)
            summary["timings"][f"finetune_{tag}"] = time.perf_counter() - t0
            if log:
                log(f"[{tag}] cam-a after fine-tune: {rep.success_rate:.0%}")

        summary["results"][variant] = {
            key: {"mean": sum(vals) / len(vals), "per_seed": vals}
            for key, vals in rates.items()}

    summary["timings"]["total"] = time.perf_counter() - started
    summary["cpu_count"] = os.cpu_count()
    (workdir / "summary.json").write_text(json.dumps(summary, indent=1))
    if log:
        log(f"campaign finished in {summary['timings']['total'] / 60:.1f} min; "
            f"summary at {workdir / 'summary.json'}")
    return summary
