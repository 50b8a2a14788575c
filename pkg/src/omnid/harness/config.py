"""Run configuration: dataclasses, the plain-text key-value format, profiles.

Config files hold one ``section.key = value`` pair per line ('#' comments).
Every key has a default; ``profile = desk|paper`` switches the base profile
before the remaining overrides apply.  ``dump_config`` emits the canonical
sorted form whose SHA-256 is the config hash embedded in reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .. import synthworld as sw
from ..geometry import BevGrid, build_grid


class ConfigError(ValueError):
    """Raised for unknown keys or malformed config values."""


@dataclass
class ModelConfig:
    grid_counts: tuple = (16, 8, 16)      # voxels per axis over the fixed workspace
    embed_dim: int = 32                   # query embedding width
    feat_dim: int = 32                    # image feature channels
    samples_per_view: int = 4             # deformable samples per (query, view)
    encoder_widths: tuple = (16, 32, 32, 32)
    encoder_strides: tuple = (4, 1, 1, 1)
    encoder_kernels: tuple = (4, 3, 1, 1)
    image_size: int = 64
    query_mode: str = "table"             # table | mlp
    pool_mode: str = "mean"               # mean | max
    pool_axis: str = "channel"            # channel | height (experimental)
    denoiser_width: int = 128
    denoiser_blocks: int = 3
    time_dim: int = 64
    cond_mode: str = "film"               # film | concat
    schedule_kind: str = "squared-cosine"
    diffusion_steps: int = 100
    horizon: int = 16
    obs_steps: int = 2
    exec_steps: int = 8
    fusion: str = "ofg"                   # ofg | concat
    margin: float = 0.5                   # projection validity margin, feature cells

    @property
    def feature_stride(self) -> int:
        s = 1
        for x in self.encoder_strides:
            s *= x
        return s


@dataclass
class TrainConfig:
    batch_size: int = 16
    steps: int = 1500
    lr: float = 1e-4
    warmup_steps: int = 500
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 1
    seeds: tuple = (1, 2, 3, 4)
    precision: str = "float32"            # float32 | float64
    deterministic: bool = True            # single-threaded BLAS, bit-stable
    grad_clip: float = 0.0                # 0 disables
    ema_decay: float = 0.0                # 0 disables
    nan_policy: str = "strict"
    checkpoint_every: int = 500
    finetune_steps: int = 400
    finetune_warmup: int = 50
    shards: int = 1                       # gradient-accumulation shards per batch


@dataclass
class DataConfig:
    train_pack: str = ""
    rig: str = ""                         # empty -> built-in default rig


@dataclass
class EvalConfig:
    episodes: int = 50
    max_steps: int = 60
    workers: int = 0                      # 0 -> one per core, capped at 8
    base_seed: int = 1000
    inference_steps: int = 0              # 0 -> use the training step count


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def grid(self) -> BevGrid:
        counts = self.model.grid_counts
        ranges = (sw.X_RANGE, sw.Y_RANGE, sw.Z_RANGE)
        resolution = tuple((hi - lo) / n for (lo, hi), n in zip(ranges, counts))
        return build_grid(ranges, resolution)


def desk_profile() -> RunConfig:
    return RunConfig()


def paper_profile() -> RunConfig:
    """Full-scale profile: 64 x 16 x 64 grid, 480 x 480 images, 100k steps."""
    cfg = RunConfig()
    cfg.model.grid_counts = (64, 16, 64)
    cfg.model.image_size = 480
    cfg.train.steps = 100_000
    return cfg


PROFILES = {"desk": desk_profile, "paper": paper_profile}

_SECTIONS = ("model", "train", "data", "eval")


def _coerce(raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            parts = [p for p in raw.replace("(", "").replace(")", "").split(",") if p.strip()]
            inner = float if any(isinstance(x, float) for x in default) else int
            return tuple(inner(p) for p in parts)
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {raw!r} as {type(default).__name__}") from exc


def parse_config(text: str) -> RunConfig:
    lines = []
    profile = "desk"
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key == "profile":
            if value not in PROFILES:
                raise ConfigError(f"line {lineno}: unknown profile {value!r}")
            profile = value
        else:
            lines.append((lineno, key, value))
    cfg = PROFILES[profile]()
    for lineno, key, value in lines:
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} needs a section prefix "
                              f"({', '.join(_SECTIONS)})")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"line {lineno}: unknown section {section!r}")
        sub = getattr(cfg, section)
        if not hasattr(sub, name):
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(sub, name, _coerce(value, getattr(sub, name)))
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


def dump_config(cfg: RunConfig) -> str:
    """Canonical text form: sorted keys, one per line."""
    rows = []
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in sorted(dataclasses.fields(sub), key=lambda f: f.name):
            value = getattr(sub, f.name)
            if isinstance(value, tuple):
                text = ",".join(str(x) for x in value)
            elif isinstance(value, bool):
                text = "true" if value else "false"
            else:
                text = str(value)
            rows.append(f"{section}.{f.name} = {text}")
    return "\n".join(rows) + "\n"


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()
