"""Demonstration storage, horizon windowing, stats, and batching.

Packs are binary containers (magic ``OMNE``) holding per-episode image,
state, and action blobs as little-endian float32, plus a JSON header with
shapes and rig metadata.  Windows never mix episodes: the observation slice
repeat-pads the first step and the action target repeat-pads the last.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorgrad.checkpoint import CheckpointError, load_manifest, load_tensors, save_tensors
from .tensorgrad.rng import CounterRng

PACK_MAGIC = b"OMNE"

OBS_STEPS = 2
HORIZON = 16
EXEC_STEPS = 8


class PackFormatError(CheckpointError):
    """Raised when an episode pack fails validation."""


@dataclass
class Episode:
    images: np.ndarray   # (T, M, 3, H, W) float32 in [0, 1]
    states: np.ndarray   # (T, state_dim) float32
    actions: np.ndarray  # (T, action_dim) float32

    @property
    def length(self) -> int:
        return self.images.shape[0]


@dataclass
class EpisodePack:
    task: str
    rig: str                  # rig file reference or tag
    cameras: list[str]        # active camera names; M = len(cameras)
    episodes: list[Episode] = field(repr=False)

    def __post_init__(self):
        if not self.episodes:
            raise PackFormatError("a pack needs at least one episode")
        m = len(self.cameras)
        shape0 = self.episodes[0].images.shape[1:]
        for i, ep in enumerate(self.episodes):
            if ep.length < 1:
                raise PackFormatError(f"episode {i} is empty")
            if ep.images.shape[1] != m:
                raise PackFormatError(f"episode {i} has {ep.images.shape[1]} views, "
                                      f"rig lists {m} cameras")
            if ep.images.shape[1:] != shape0:
                raise PackFormatError(f"episode {i} image shape {ep.images.shape[1:]} "
                                      f"differs from {shape0}")
            if ep.states.shape[0] != ep.length or ep.actions.shape[0] != ep.length:
                raise PackFormatError(f"episode {i} blob lengths disagree")

    @property
    def num_views(self) -> int:
        return len(self.cameras)

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.episodes[0].images.shape[3], self.episodes[0].images.shape[4]

    @property
    def state_dim(self) -> int:
        return self.episodes[0].states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.episodes[0].actions.shape[1]

    @property
    def lengths(self) -> list[int]:
        return [ep.length for ep in self.episodes]


def write_pack(path: str | Path, pack: EpisodePack) -> None:
    tensors: dict[str, np.ndarray] = {}
    for i, ep in enumerate(pack.episodes):
        imgs = np.asarray(ep.images, dtype=np.float32)
        if imgs.min() < -1e-6 or imgs.max() > 1.0 + 1e-6:
            raise PackFormatError(f"episode {i} pixels outside [0, 1]: "
                                  f"[{imgs.min():.4f}, {imgs.max():.4f}]")
        tensors[f"ep{i:05d}.images"] = imgs
        tensors[f"ep{i:05d}.states"] = np.asarray(ep.states, dtype=np.float32)
        tensors[f"ep{i:05d}.actions"] = np.asarray(ep.actions, dtype=np.float32)
    meta = {
        "task": pack.task,
        "rig": pack.rig,
        "cameras": pack.cameras,
        "episodes": len(pack.episodes),
        "lengths": pack.lengths,
        "image_hw": list(pack.image_hw),
        "state_dim": pack.state_dim,
        "action_dim": pack.action_dim,
        "dtype": "<f4",
    }
    save_tensors(path, tensors, magic=PACK_MAGIC, meta=meta)


def read_pack(path: str | Path) -> EpisodePack:
    try:
        tensors, meta = load_tensors(path, magic=PACK_MAGIC, with_meta=True)
    except CheckpointError as exc:
        raise PackFormatError(str(exc)) from exc
    count = meta.get("episodes")
    if count is None:
        raise PackFormatError(f"{path}: header lacks an episode count")
    episodes = []
    for i in range(count):
        try:
            episodes.append(Episode(tensors[f"ep{i:05d}.images"],
                                    tensors[f"ep{i:05d}.states"],
                                    tensors[f"ep{i:05d}.actions"]))
        except KeyError as exc:
            raise PackFormatError(f"{path}: missing blob for episode {i}") from exc
    pack = EpisodePack(meta["task"], meta["rig"], list(meta["cameras"]), episodes)
    if pack.lengths != list(meta["lengths"]):
        raise PackFormatError(f"{path}: header lengths {meta['lengths']} do not "
                              f"match blobs {pack.lengths}")
    return pack


def inspect_header(path: str | Path) -> dict:
    """Header JSON of a pack without loading the payload into episodes."""
    manifest = load_manifest(path, magic=PACK_MAGIC)
    return manifest.get("meta", {})


# -- windowing -------------------------------------------------------------------


@dataclass(frozen=True)
class Window:
    """One training window: observations end at ``t``, targets start there."""

    episode: int
    t: int
    obs_padded: bool      # first observation step repeats step 0
    target_padding: int   # trailing target steps that repeat the last action


def windows(pack: EpisodePack, obs_steps: int = OBS_STEPS,
            horizon: int = HORIZON) -> list[Window]:
    """One window per timestep per episode."""
    out = []
    for ei, ep in enumerate(pack.episodes):
        t_len = ep.length
        for t in range(t_len):
            out.append(Window(ei, t, obs_padded=(t - obs_steps + 1 < 0),
                              target_padding=max(0, t + horizon - t_len)))
    return out


def gather_window(pack: EpisodePack, win: Window, obs_steps: int = OBS_STEPS,
                  horizon: int = HORIZON):
    """Materialize (images, states, actions) for one window with repeat padding."""
    ep = pack.episodes[win.episode]
    obs_idx = np.clip(np.arange(win.t - obs_steps + 1, win.t + 1), 0, ep.length - 1)
    tgt_idx = np.clip(np.arange(win.t, win.t + horizon), 0, ep.length - 1)
    return ep.images[obs_idx], ep.states[obs_idx], ep.actions[tgt_idx]


def stack_windows(pack: EpisodePack, wins: list[Window], obs_steps: int = OBS_STEPS,
                  horizon: int = HORIZON):
    """Batch windows into (B, T_obs, M, 3, H, W), (B, T_obs, sd), (B, H_p, ad)."""
    images, states, actions = zip(*(gather_window(pack, w, obs_steps, horizon)
                                    for w in wins))
    return np.stack(images), np.stack(states), np.stack(actions)


# -- normalization ----------------------------------------------------------------


@dataclass(frozen=True)
class PackStats:
    """Per-dimension extrema; degenerate dimensions widened to width 1e-6."""

    action_lo: np.ndarray
    action_hi: np.ndarray
    state_lo: np.ndarray
    state_hi: np.ndarray

    def to_json(self) -> dict:
        return {k: [float(x) for x in getattr(self, k)]
                for k in ("action_lo", "action_hi", "state_lo", "state_hi")}

    @classmethod
    def from_json(cls, doc: dict) -> "PackStats":
        return cls(**{k: np.asarray(doc[k], dtype=np.float64)
                      for k in ("action_lo", "action_hi", "state_lo", "state_hi")})


def _widen(lo: np.ndarray, hi: np.ndarray, width: float = 1e-6):
    tight = hi - lo < width
    half = width / 2.0
    return (np.where(tight, lo - half, lo), np.where(tight, hi + half, hi))


def normalization_stats(pack: EpisodePack) -> PackStats:
    actions = np.concatenate([ep.actions for ep in pack.episodes]).astype(np.float64)
    states = np.concatenate([ep.states for ep in pack.episodes]).astype(np.float64)
    a_lo, a_hi = _widen(actions.min(axis=0), actions.max(axis=0))
    s_lo, s_hi = _widen(states.min(axis=0), states.max(axis=0))
    return PackStats(a_lo, a_hi, s_lo, s_hi)


# -- batching ----------------------------------------------------------------------


def batch_iter(pack: EpisodePack, batch_size: int, rng: CounterRng,
               obs_steps: int = OBS_STEPS, horizon: int = HORIZON):
    """Endless deterministic shuffled batches of full size.

    Window order is a fresh Fisher-Yates permutation of all windows each
    epoch, drawn from the counter RNG, so iteration order is identical
    across runs and platforms for a given seed.
    """
    wins = windows(pack, obs_steps, horizon)
    if len(wins) < batch_size:
        raise ValueError(f"pack has {len(wins)} windows < batch size {batch_size}")
    while True:
        order = rng.permutation(len(wins))
        for start in range(0, len(wins) - batch_size + 1, batch_size):
            chosen = [wins[i] for i in order[start:start + batch_size]]
            yield stack_windows(pack, chosen, obs_steps, horizon)
