"""Seeded training and fine-tuning loops.

Each step draws a shuffled window batch, builds the conditioning through the
fusion module, takes a diffusion-loss gradient step with the warmup-cosine
learning rate, and appends (step, loss, lr) to the loss curve CSV.  A
non-finite loss aborts immediately; the last periodic checkpoint stays on
disk.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffusion import diffusion_loss
from ..episodes import EpisodePack, batch_iter, normalization_stats, read_pack
from ..synthworld import rig_subset
from ..tensorgrad import AdamW, NumericError, Tensor, WarmupCosineSchedule
from ..tensorgrad.optim import clip_grad_norm
from ..tensorgrad.rng import CounterRng
from .config import RunConfig
from .models import build_policy, policy_parameters, resolve_rig, save_policy


@dataclass
class TrainResult:
    checkpoint: str
    curve: str
    steps_run: int
    final_loss: float
    aborted: bool = False


@contextlib.contextmanager
def _deterministic_blas(enabled: bool):
    """Pin BLAS to one thread so reductions happen in a fixed order."""
    if not enabled:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        yield
        return
    with threadpool_limits(limits=1):
        yield


def train(cfg: RunConfig, workdir: str | Path, seed: int | None = None,
          pack: EpisodePack | str | None = None, steps: int | None = None,
          warmup: int | None = None, init_from: str | Path | None = None,
          log=None) -> TrainResult:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    seed = cfg.train.seed if seed is None else int(seed)
    steps = cfg.train.steps if steps is None else int(steps)
    warmup = cfg.train.warmup_steps if warmup is None else int(warmup)
    warmup = min(warmup, steps - 1) if steps > 1 else 0

    if pack is None:
        pack = cfg.data.train_pack
    if isinstance(pack, (str, Path)):
        pack = read_pack(pack)

    rig = resolve_rig(cfg)
    rig_subset(rig, pack.cameras)  # validates the pack's cameras exist

    root = CounterRng(seed)
    if init_from is not None:
        from .models import load_policy
        policy, base_cfg, stats, rig = load_policy(init_from)
        cfg = RunConfig(model=base_cfg.model, train=cfg.train,
                        data=cfg.data, eval=cfg.eval)  # architecture is the base's
        if stats.action_lo.shape[0] != pack.action_dim:
            raise ValueError(f"fine-tune pack action_dim {pack.action_dim} != "
                             f"checkpoint {stats.action_lo.shape[0]}")
        policy.fusion.set_active_cameras(list(pack.cameras))
    else:
        stats = normalization_stats(pack)
        policy = build_policy(cfg, rig, list(pack.cameras), stats, root.split("init"))

    params = policy_parameters(policy, cfg.model.fusion)
    opt = AdamW(params, lr=cfg.train.lr, betas=(cfg.train.beta1, cfg.train.beta2),
                eps=cfg.train.adam_eps, weight_decay=cfg.train.weight_decay,
                nan_policy=cfg.train.nan_policy)
    lr_schedule = WarmupCosineSchedule(cfg.train.lr, warmup, steps) if steps > 1 else None
    batches = batch_iter(pack, cfg.train.batch_size, root.split("batches"),
                         cfg.model.obs_steps, cfg.model.horizon)
    rng_diff = root.split("diffusion")
    ema = {k: p.data.copy() for k, p in params.items()} if cfg.train.ema_decay > 0 else None

    ckpt_path = workdir / "policy.omnd"
    curve_path = workdir / "loss_curve.csv"
    rows = ["step,loss,lr"]
    aborted = False
    loss_value = float("nan")

    shards = max(1, int(cfg.train.shards))
    with _deterministic_blas(cfg.train.deterministic):
        for step_idx in range(1, steps + 1):
            images, states, actions = next(batches)
            states_n = policy.state_norm.normalize(states.astype(np.float64)).astype(np.float32)
            actions_n = policy.action_norm.normalize(actions.astype(np.float64)).astype(np.float32)
            opt.zero_grad()
            loss_value = 0.0
            bsz = images.shape[0]
            bounds = np.linspace(0, bsz, shards + 1, dtype=int)
            for lo, hi in zip(bounds[:-1], bounds[1:]):  # fixed shard order
                if hi == lo:
                    continue
                cond = policy.fusion.conditioning(Tensor(images[lo:hi]),
                                                  Tensor(states_n[lo:hi]))
                loss = diffusion_loss(policy.denoiser, policy.schedule,
                                      actions_n[lo:hi], cond, rng_diff,
                                      update_cond_stats=True)
                if shards > 1:
                    loss = loss * ((hi - lo) / bsz)
                loss_value += loss.item()
                if np.isfinite(loss_value):
                    loss.backward()
            lr = lr_schedule.lr_at(step_idx) if lr_schedule else cfg.train.lr
            rows.append(f"{step_idx},{loss_value!r},{lr!r}")
            if not np.isfinite(loss_value):
                aborted = True
                break
            if cfg.train.grad_clip > 0:
                clip_grad_norm(params, cfg.train.grad_clip)
            opt.step(lr=lr)
            if ema is not None:
                d = cfg.train.ema_decay
                for k, p in params.items():
                    ema[k] = d * ema[k] + (1.0 - d) * p.data
            if log and (step_idx % 100 == 0 or step_idx == 1):
                log(f"step {step_idx}/{steps} loss {loss_value:.4f} lr {lr:.2e}")
            if cfg.train.checkpoint_every and step_idx % cfg.train.checkpoint_every == 0:
                save_policy(ckpt_path, policy, cfg, stats, rig)

    curve_path.write_text("\n".join(rows) + "\n")
    if aborted:
        raise NumericError(
            f"non-finite loss at step {len(rows) - 1}; last periodic checkpoint "
            f"retained at {ckpt_path}")
    override = ema if ema is not None else None
    save_policy(ckpt_path, policy, cfg, stats, rig, override_arrays=override)
    return TrainResult(str(ckpt_path), str(curve_path), steps, loss_value)


def finetune(base_checkpoint: str | Path, pack: EpisodePack | str,
             cfg: RunConfig, workdir: str | Path,
             seed: int | None = None, steps: int | None = None) -> TrainResult:
    """Continue optimization on a new pack with fresh optimizer state and a
    shorter schedule; extrinsics are inputs, so a new camera subset needs no
    architectural change."""
    steps = cfg.train.finetune_steps if steps is None else int(steps)
    if steps == 0:
        # behaviorally a no-op: re-emit the base checkpoint under workdir
        import shutil
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        out = workdir / "policy.omnd"
        shutil.copyfile(base_checkpoint, out)
        shutil.copyfile(str(base_checkpoint) + ".json", str(out) + ".json")
        (workdir / "loss_curve.csv").write_text("step,loss,lr\n")
        return TrainResult(str(out), str(workdir / "loss_curve.csv"), 0, float("nan"))
    return train(cfg, workdir, seed=seed, pack=pack, steps=steps,
                 warmup=cfg.train.finetune_warmup, init_from=base_checkpoint)
