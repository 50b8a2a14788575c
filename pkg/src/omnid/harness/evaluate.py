"""Closed-loop evaluation protocols.

Scenarios mirror the training/evaluation splits: the in-distribution square,
the position annulus, four held-out backgrounds, and the held-out camera.
Each episode owns an RNG stream keyed by its index, so results are identical
whether episodes run serially or on worker processes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import synthworld as sw
from ..synthworld import EnvParams, ScenarioSpec, render_views, rig_subset, scenario_scene
from ..tensorgrad.rng import CounterRng
from .config import RunConfig, config_hash
from .models import checkpoint_hash, load_policy

SCENARIOS = ("id", "pos-ood", "bg-ood-1", "bg-ood-2", "bg-ood-3", "bg-ood-4", "cam-a")


def scenario_spec(name: str, episodes: int, seed: int) -> ScenarioSpec:
    if name == "id":
        return ScenarioSpec("id", 0, "BCDE", episodes, seed)
    if name == "pos-ood":
        return ScenarioSpec("annulus", 0, "BCDE", episodes, seed)
    if name.startswith("bg-ood-"):
        return ScenarioSpec("id", int(name.rsplit("-", 1)[1]), "BCDE", episodes, seed)
    if name == "cam-a":
        return ScenarioSpec("id", 0, "A", episodes, seed)
    raise ValueError(f"unknown scenario {name!r}; known: {SCENARIOS}")


@dataclass
class EvalReport:
    scenario: str
    episodes: int
    successes: int
    success_rate: float
    mean_episode_length: float
    episode_seeds: list = field(default_factory=list)
    episode_results: list = field(default_factory=list)
    episode_lengths: list = field(default_factory=list)
    config_hash: str = ""
    checkpoint_hash: str = ""
    policy_kind: str = "checkpoint"
    base_seed: int = 0

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


class RandomPolicy:
    """Uniform actions inside the environment's native bounds."""

    needs_vision = False

    def __init__(self, params: EnvParams, exec_steps: int = 8):
        self.params = params
        self.exec_steps = exec_steps

    def plan(self, scene, rng: CounterRng) -> np.ndarray:
        deltas = (rng.uniform((self.exec_steps, 3)) * 2 - 1) * self.params.max_step
        grip = rng.uniform((self.exec_steps, 1)) * 2 - 1
        return np.concatenate([deltas, grip], axis=1)


class ExpertReplayPolicy:
    """Replays the scripted controller (reads the scene, not pixels)."""

    needs_vision = False

    def __init__(self, params: EnvParams, exec_steps: int = 8):
        self.params = params
        self.exec_steps = exec_steps

    def plan(self, scene, rng: CounterRng) -> np.ndarray:
        return np.stack([sw.expert_action(scene, self.params)])  # replan each step


def rollout_episode(policy, scene, cameras, ep_rng: CounterRng,
                    max_steps: int = 60, params: EnvParams = EnvParams(),
                    inference_schedule=None):
    """Run one closed-loop episode; returns (success, steps_taken).

    The observation window repeats the first frame at episode start, matching
    the training-time windowing.
    """
    needs_vision = getattr(policy, "needs_vision", True)
    steps_taken = 0
    if needs_vision:
        cur_i = render_views(scene, cameras)
        cur_s = scene.robot_state()
        prev_i, prev_s = cur_i, cur_s
    while steps_taken < max_steps:
        if needs_vision:
            actions = policy.act(np.stack([prev_i, cur_i]), np.stack([prev_s, cur_s]),
                                 ep_rng, sample_schedule=inference_schedule)
        else:
            actions = policy.plan(scene, ep_rng)
        for action in actions:
            scene, done = sw.step(scene, action, params)
            steps_taken += 1
            if needs_vision:
                prev_i, prev_s = cur_i, cur_s
                cur_i = render_views(scene, cameras)
                cur_s = scene.robot_state()
            if done or steps_taken >= max_steps:
                break
        if scene.succeeded:
            break
    return scene.succeeded, steps_taken


def _episode_seed(base_seed: int, index: int) -> int:
    return base_seed * 100_000 + index


def _run_episode(args):
    (ckpt, scenario, index, base_seed, max_steps, policy_kind, inference_steps) = args
    spec = scenario_spec(scenario, 1, base_seed)
    scene = scenario_scene(spec, index)
    params = EnvParams()
    ep_rng = CounterRng(base_seed).split("episode").split(index)
    if policy_kind == "checkpoint":
        policy, cfg, _, rig = _cached_policy(ckpt)
        cams = rig_subset(rig, spec.cameras)
        sched = None
        if inference_steps:
            from ..diffusion import build_schedule
            sched = build_schedule(cfg.model.schedule_kind, inference_steps)
        ok, n = rollout_episode(policy, scene, cams, ep_rng, max_steps,
                                params, inference_schedule=sched)
    elif policy_kind == "random":
        ok, n = rollout_episode(RandomPolicy(params), scene, [], ep_rng, max_steps, params)
    elif policy_kind == "expert":
        ok, n = rollout_episode(ExpertReplayPolicy(params), scene, [], ep_rng,
                                max_steps, params)
    else:
        raise ValueError(f"unknown policy kind {policy_kind!r}")
    return index, bool(ok), int(n)


_POLICY_CACHE: dict = {}


def _cached_policy(ckpt: str):
    stat = os.stat(ckpt)
    key = (ckpt, stat.st_mtime_ns, stat.st_size)
    if key not in _POLICY_CACHE:
        _POLICY_CACHE.clear()
        _POLICY_CACHE[key] = load_policy(ckpt)
    return _POLICY_CACHE[key]


def evaluate(checkpoint: str | Path | None, scenario: str, episodes: int = 50,
             base_seed: int = 1000, max_steps: int = 60, workers: int = 0,
             policy_kind: str = "checkpoint", inference_steps: int = 0) -> EvalReport:
    """Evaluate a policy over seeded episodes of one scenario."""
    spec = scenario_spec(scenario, episodes, base_seed)
    ckpt = str(checkpoint) if checkpoint is not None else ""
    cfg_hash = ck_hash = ""
    if policy_kind == "checkpoint":
        if not ckpt:
            raise ValueError("checkpoint required for policy_kind='checkpoint'")
        policy, cfg, _, rig = load_policy(ckpt)
        active = set(policy.fusion.active_cameras)
        if active != set(spec.cameras):
            raise ValueError(f"checkpoint was trained on cameras "
                             f"{sorted(active)} but scenario {scenario!r} uses "
                             f"{sorted(spec.cameras)}")
        cfg_hash = config_hash(cfg)
        ck_hash = checkpoint_hash(ckpt)

    jobs = [(ckpt, scenario, i, base_seed, max_steps, policy_kind, inference_steps)
            for i in range(episodes)]
    if workers == 0:
        workers = min(os.cpu_count() or 1, 8)
    if workers > 1 and episodes > 1:
        import multiprocessing as mp
        with mp.get_context("spawn").Pool(workers) as pool:
            results = pool.map(_run_episode, jobs)
    else:
        results = [_run_episode(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    flags = [ok for _, ok, _ in results]
    lengths = [n for _, _, n in results]
    successes = sum(flags)
    return EvalReport(
        scenario=scenario, episodes=episodes, successes=successes,
        success_rate=successes / episodes,
        mean_episode_length=float(np.mean(lengths)),
        episode_seeds=[_episode_seed(base_seed, i) for i in range(episodes)],
        episode_results=[bool(f) for f in flags],
        episode_lengths=[int(n) for n in lengths],
        config_hash=cfg_hash, checkpoint_hash=ck_hash,
        policy_kind=policy_kind, base_seed=base_seed)
