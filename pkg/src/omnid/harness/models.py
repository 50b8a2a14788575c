"""Policy assembly and checkpoint round-tripping.

A checkpoint is the tensor container (fusion under ``ofg.*`` or ``concat.*``,
action head under ``diffusion.*``) plus a JSON sidecar carrying the schedule,
horizons, normalization stats, active cameras, the full rig, and the config
text so a policy can be rebuilt from the file pair alone.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..diffusion import Denoiser, MinMaxNormalizer, Policy, build_schedule
from ..episodes import PackStats
from ..geometry import Camera
from ..ofg import OmniFeatureGenerator
from ..synthworld import default_rig, rig_subset
from ..tensorgrad import load_tensors, save_tensors
from ..tensorgrad.rng import CounterRng
from .baseline import ConcatFusion
from .config import RunConfig, config_hash, dump_config, load_config, parse_config

FUSION_PREFIX = {"ofg": "ofg.", "concat": "concat."}


def resolve_rig(cfg: RunConfig) -> list[Camera]:
    """Rig universe with the config's feature stride applied."""
    from ..geometry import load_rig
    stride = cfg.model.feature_stride
    if cfg.data.rig:
        cams = load_rig(cfg.data.rig, feature_stride=stride)
    else:
        cams = [c.with_stride(stride) for c in default_rig(cfg.model.image_size)]
    return cams


def build_fusion(cfg: RunConfig, rig: list[Camera], active: list[str],
                 rng: CounterRng):
    grid = cfg.grid()
    mc = cfg.model
    if mc.fusion == "ofg":
        return OmniFeatureGenerator(
            grid, rig, active, mc.embed_dim, mc.feat_dim, mc.samples_per_view,
            mc.encoder_widths, mc.encoder_strides, rng,
            query_mode=mc.query_mode, pool_mode=mc.pool_mode, margin=mc.margin,
            encoder_kernels=mc.encoder_kernels, pool_axis=mc.pool_axis)
    if mc.fusion == "concat":
        return ConcatFusion(grid, rig, active, mc.feat_dim,
                            mc.encoder_widths, mc.encoder_strides, rng,
                            encoder_kernels=mc.encoder_kernels)
    raise ValueError(f"unknown fusion kind {mc.fusion!r} (use ofg or concat)")


def build_policy(cfg: RunConfig, rig: list[Camera], active: list[str],
                 stats: PackStats, rng: CounterRng) -> Policy:
    mc = cfg.model
    fusion = build_fusion(cfg, rig, active, rng.split("fusion"))
    state_dim = stats.state_lo.shape[0]
    action_dim = stats.action_lo.shape[0]
    cond_dim = mc.obs_steps * (fusion.conditioning_length + state_dim)
    denoiser = Denoiser(action_dim, mc.horizon, cond_dim, rng.split("denoiser"),
                        width=mc.denoiser_width, blocks=mc.denoiser_blocks,
                        time_dim=mc.time_dim, cond_mode=mc.cond_mode)
    schedule = build_schedule(mc.schedule_kind, mc.diffusion_steps)
    return Policy(fusion, denoiser,
                  schedule,
                  MinMaxNormalizer(stats.action_lo, stats.action_hi),
                  MinMaxNormalizer(stats.state_lo, stats.state_hi),
                  obs_steps=mc.obs_steps, exec_steps=mc.exec_steps)


def policy_parameters(policy: Policy, fusion_kind: str):
    params = {}
    params.update(policy.fusion.named_parameters(FUSION_PREFIX[fusion_kind]))
    params.update(policy.denoiser.named_parameters("diffusion."))
    return params


def save_policy(path: str | Path, policy: Policy, cfg: RunConfig,
                stats: PackStats, rig: list[Camera],
                override_arrays: dict[str, np.ndarray] | None = None) -> None:
    params = policy_parameters(policy, cfg.model.fusion)
    arrays = {k: v.data for k, v in params.items()}
    if override_arrays is not None:
        arrays = dict(override_arrays)
    arrays.update(policy.denoiser.buffer_arrays("diffusion."))
    save_tensors(path, arrays)
    sidecar = {
        "schedule_kind": cfg.model.schedule_kind,
        "diffusion_steps": cfg.model.diffusion_steps,
        "action_dim": int(stats.action_lo.shape[0]),
        "horizon": cfg.model.horizon,
        "normalization": stats.to_json(),
        "cameras": policy.fusion.active_cameras,
        "rig": [{"name": c.name, "fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
                 "R": [float(x) for x in c.rotation.ravel()],
                 "t": [float(x) for x in c.translation],
                 "width": c.width, "height": c.height} for c in rig],
        "config": dump_config(cfg),
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1))


def load_policy(path: str | Path):
    """Rebuild (policy, cfg, stats, rig) from a checkpoint file pair."""
    sidecar = json.loads(Path(str(path) + ".json").read_text())
    cfg = parse_config(sidecar["config"])
    stats = PackStats.from_json(sidecar["normalization"])
    stride = cfg.model.feature_stride
    rig = [Camera(r["name"], r["fx"], r["fy"], r["cx"], r["cy"],
                  np.asarray(r["R"]).reshape(3, 3), np.asarray(r["t"]),
                  r["width"], r["height"], stride) for r in sidecar["rig"]]
    policy = build_policy(cfg, rig, list(sidecar["cameras"]), stats, CounterRng(0))
    arrays = load_tensors(path)
    if "diffusion.cond_stat_mean" in arrays:
        policy.denoiser.load_buffers(arrays, "diffusion.")
    params = policy_parameters(policy, cfg.model.fusion)
    for name, p in params.items():
        if name not in arrays:
            raise KeyError(f"checkpoint {path} lacks tensor '{name}'")
        arr = np.asarray(arrays[name], dtype=p.data.dtype)
        if arr.shape != p.data.shape:
            raise ValueError(f"checkpoint tensor '{name}' shape {arr.shape} != "
                             f"model {p.data.shape}")
        p.data = arr.copy()
    return policy, cfg, stats, rig


def checkpoint_hash(path: str | Path) -> str:
    """Content hash of the checkpoint file, git blob style."""
    blob = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(f"blob {len(blob)}\0".encode())
    h.update(blob)
    return h.hexdigest()


def file_config_hash(path: str | Path) -> str:
    return config_hash(load_config(path))
