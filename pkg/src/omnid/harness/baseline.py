"""Concat-fusion control model: the same encoder and action head as the
deformable pipeline, with fusion replaced by per-view global average pooling,
cross-view concatenation, and a linear projection to the same conditioning
width.  It never reads camera extrinsics."""

from __future__ import annotations

import numpy as np

from ..geometry import BevGrid, Camera
from ..ofg import ViewEncoder, assemble_conditioning, encode_views
from ..tensorgrad import Linear, Module, Tensor
from ..tensorgrad.rng import CounterRng


class ConcatFusion(Module):
    """Projection slots are keyed by camera identity across the rig universe
    (inactive views contribute zeros), mirroring the deformable module so the
    active subset can change without touching parameter shapes."""

    def __init__(self, grid: BevGrid, rig: list[Camera], active: list[str],
                 feat_dim: int, encoder_widths: tuple[int, ...],
                 encoder_strides: tuple[int, ...], rng: CounterRng,
                 encoder_kernels: tuple[int, ...] | None = None):
        self.grid = grid
        self.rig_names = [c.name for c in rig]
        self.feat_dim = feat_dim
        stride = rig[0].feature_stride
        self.encoder = ViewEncoder(feat_dim, encoder_widths, encoder_strides,
                                   stride, rng.split("encoder"),
                                   kernels=encoder_kernels)
        self.proj = Linear(len(rig) * feat_dim, grid.num_points, rng.split("proj"))
        self.set_active_cameras(active)

    def set_active_cameras(self, names: list[str]) -> None:
        missing = [nm for nm in names if nm not in self.rig_names]
        if missing:
            raise ValueError(f"cameras {missing} not in rig {self.rig_names}")
        self._active_names = list(names)
        m, d, total = len(names), self.feat_dim, len(self.rig_names) * self.feat_dim
        place = np.zeros((m * d, total))
        for i, nm in enumerate(names):
            slot = self.rig_names.index(nm)
            place[i * d:(i + 1) * d, slot * d:(slot + 1) * d] = np.eye(d)
        self._place = place

    @property
    def active_cameras(self) -> list[str]:
        return list(self._active_names)

    @property
    def conditioning_length(self) -> int:
        return self.grid.num_points

    def fuse(self, images: Tensor) -> Tensor:
        """(V, M, 3, H, W) -> (V, conditioning_length) pooled-and-projected."""
        m = len(self._active_names)
        if images.shape[1] != m:
            raise ValueError(f"got {images.shape[1]} views, active rig has {m}")
        feats = encode_views(self.encoder, images)  # (V, M, d_f, H_f, W_f)
        v, _, d, hf, wf = feats.shape
        gap = feats.reshape((v, m, d, hf * wf)).mean(axis=3)  # (V, M, d_f)
        placed = gap.reshape((v, m * d)) @ Tensor(self._place.astype(gap.dtype.type))
        return self.proj(placed)

    def conditioning(self, images: Tensor, states: Tensor) -> Tensor:
        if images.ndim != 6:
            raise ValueError(f"expected (B, T, M, 3, H, W) images, got {images.shape}")
        b, t = images.shape[0], images.shape[1]
        pooled = self.fuse(images.reshape((b * t,) + images.shape[2:]))
        return assemble_conditioning(pooled.reshape((b, t, pooled.shape[1])), states)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = {}
        params.update(self.encoder.named_parameters(f"{prefix}encoder."))
        params.update(self.proj.named_parameters(f"{prefix}proj."))
        return params
