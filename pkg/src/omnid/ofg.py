"""Omni feature generation: multi-view image encoding, learned per-query
offsets and attention weights, deformable bilinear aggregation into the BEV
volume, and channel-pooled compression into the policy conditioning vector.

The fused feature for query i is

    f_i = sum_j sum_k w_ijk * Bilinear(F_j, r_ij + dp_ijk)

where r_ij is the projected reference point of query i in view j, dp_ijk are
learned offsets, and w_ijk are masked-softmax attention weights over every
(view, sample) slot of the query.  Queries with no valid view produce exactly
zero features and receive exactly zero gradients.

The batched path assembles the bilinear corner weights into a CSR matrix so
aggregation over all queries, views, samples and corners is one sparse-dense
product per volume batch; a scalar reference implementation for verification
lives with the tests, not here.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .geometry import BevGrid, Camera, ProjectionTable, project_grid
from .tensorgrad import Linear, Module, Tensor, concat, gelu, relu, softmax, where_mask
from .tensorgrad.nn import Conv2d
from .tensorgrad.rng import CounterRng
from .tensorgrad.tensor import _make, _wants_grad, reduce_max, reduce_mean


# -- shared convolutional view encoder ------------------------------------------


class ViewEncoder(Module):
    """Strided conv stack shared across views; the last layer is linear so a
    zero final weight yields all-zero features.

    Strided layers use patch kernels (kernel = stride, no padding) and
    stride-1 layers use 3x3 with unit padding, so the output size is exactly
    input / feature_stride.
    """

    def __init__(self, out_channels: int, widths: tuple[int, ...],
                 strides: tuple[int, ...], feature_stride: int,
                 rng: CounterRng, in_channels: int = 3,
                 kernels: tuple[int, ...] | None = None):
        if len(widths) != len(strides):
            raise ValueError(f"widths {widths} and strides {strides} must align")
        total = int(np.prod(strides))
        if total != feature_stride:
            raise ValueError(f"stride product {total} != feature_stride {feature_stride}")
        if kernels is None:
            kernels = tuple(s if s > 1 else 3 for s in strides)
        if len(kernels) != len(strides):
            raise ValueError(f"kernels {kernels} and strides {strides} must align")
        chans = (in_channels,) + tuple(widths[:-1]) + (out_channels,)
        self.layers = [
            Conv2d(chans[i], chans[i + 1], kernels[i], rng.split(f"conv{i}"),
                   stride=strides[i],
                   padding=0 if strides[i] > 1 else (kernels[i] - 1) // 2)
            for i in range(len(strides))
        ]
        self.feature_stride = feature_stride
        self.out_channels = out_channels

    def __call__(self, images: Tensor) -> Tensor:
        x = images
        for layer in self.layers[:-1]:
            x = relu(layer(x))
        return self.layers[-1](x)


def encode_views(encoder: ViewEncoder, images: Tensor) -> Tensor:
    """Apply the shared encoder to a stack of views.

    ``images`` is (V, M, 3, H, W) with pixel values in [0, 1]; returns
    (V, M, d_f, H_f, W_f) with H_f = H / feature_stride exactly.
    """
    if images.ndim != 5 or images.shape[2] != 3:
        raise ValueError(f"expected (V, M, 3, H, W) image stack, got {images.shape}")
    v, m, c, h, w = images.shape
    s = encoder.feature_stride
    if h % s or w % s:
        raise ValueError(f"image size {h}x{w} not divisible by feature stride {s}")
    flat = images.reshape((v * m, c, h, w))
    feats = encoder(flat)
    return feats.reshape((v, m, encoder.out_channels, h // s, w // s))


# -- bilinear sampling --------------------------------------------------------------


def _corner_terms(u: np.ndarray, v: np.ndarray, width: int, height: int):
    """Corner lattice indices and bilinear weights with zero padding.

    Returns (flat_idx (..., 4), weights (..., 4), du (..., 4), dv (..., 4));
    out-of-bounds corners get weight 0 (and zero derivative) with a clamped
    index so they are never dereferenced outside the map.
    """
    x0 = np.floor(u)
    y0 = np.floor(v)
    fu = u - x0
    fv = v - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    xs = np.stack([x0i, x0i + 1, x0i, x0i + 1], axis=-1)
    ys = np.stack([y0i, y0i, y0i + 1, y0i + 1], axis=-1)
    inb = (xs >= 0) & (xs < width) & (ys >= 0) & (ys < height)
    one = np.ones_like(fu)
    w = np.stack([(one - fu) * (one - fv), fu * (one - fv),
                  (one - fu) * fv, fu * fv], axis=-1)
    du = np.stack([-(one - fv), (one - fv), -fv, fv], axis=-1)
    dv = np.stack([-(one - fu), -fu, (one - fu), fu], axis=-1)
    w = np.where(inb, w, 0.0)
    du = np.where(inb, du, 0.0)
    dv = np.where(inb, dv, 0.0)
    flat = np.clip(ys, 0, height - 1) * width + np.clip(xs, 0, width - 1)
    return flat, w, du, dv


def bilinear_sample(feature_map: Tensor, location) -> Tensor:
    """Sample one (u, v) location from a (d_f, H_f, W_f) map.

    Integer coordinates sit on the cell-corner lattice; neighbours outside
    the map contribute zero.  Differentiable in both the map values and the
    location when ``location`` is a Tensor.
    """
    if feature_map.ndim != 3:
        raise ValueError(f"expected (d_f, H_f, W_f) map, got {feature_map.shape}")
    loc_t = location if isinstance(location, Tensor) else None
    uv = np.asarray(location.data if loc_t is not None else location, dtype=np.float64).reshape(2)
    d_f, h, w = feature_map.shape
    flat, cw, du, dv = _corner_terms(uv[0:1], uv[1:2], w, h)
    flat, cw, du, dv = flat[0], cw[0], du[0], dv[0]
    maps = feature_map.data.reshape(d_f, h * w)
    out = np.zeros(d_f, dtype=feature_map.dtype)
    for c in range(4):  # fixed corner order keeps the sum bit-reproducible
        out = out + cw[c] * maps[:, flat[c]]

    parents = (feature_map,) if loc_t is None else (feature_map, loc_t)

    def backward(g):
        gmap = None
        if _wants_grad(feature_map):
            gmap = np.zeros_like(maps)
            for c in range(4):
                gmap[:, flat[c]] += cw[c] * g
            gmap = gmap.reshape(feature_map.shape)
        if loc_t is None:
            return (gmap,)
        gu = sum(float(du[c] * (g * maps[:, flat[c]]).sum()) for c in range(4))
        gv = sum(float(dv[c] * (g * maps[:, flat[c]]).sum()) for c in range(4))
        return gmap, np.array([gu, gv], dtype=loc_t.dtype)

    return _make(out, parents, backward, "bilinear")


# -- deformable aggregation ----------------------------------------------------------


def masked_softmax_weights(logits: Tensor, valid_slots: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to valid slots.

    Invalid slots get exactly zero weight; rows with no valid slot become all
    zero (and pass zero gradient).
    """
    filled = where_mask(valid_slots, logits, -1.0e30)
    weights = softmax(filled, axis=-1)
    any_valid = valid_slots.any(axis=-1, keepdims=True)
    gate = (valid_slots & any_valid).astype(logits.dtype)
    return weights * Tensor(gate, dtype=logits.dtype)


def deform_fuse(feats: Tensor, locations: Tensor, weights: Tensor,
                valid: np.ndarray) -> Tensor:
    """Weighted bilinear aggregation over all (view, sample) slots per query.

    feats:     (V, M, d_f, H_f, W_f)  feature maps per volume and view
    locations: (N, M, K, 2)           sample locations shared by all volumes
    weights:   (N, M, K)              masked attention weights
    valid:     (N, M) bool            query/view visibility

    Returns (V, N, d_f).  The aggregation is a CSR sparse product; gradients
    flow to feature maps, locations, and weights.
    """
    v_n, m, d_f, h, w = feats.shape
    n, m2, k, two = locations.shape
    if m2 != m or two != 2 or weights.shape != (n, m, k):
        raise ValueError(f"inconsistent fuse shapes: feats {feats.shape}, "
                         f"locations {locations.shape}, weights {weights.shape}")
    cells = m * h * w
    dtype = feats.dtype

    loc = locations.data.reshape(n * m * k, 2)
    flat, cw, du, dv = _corner_terms(loc[:, 0], loc[:, 1], w, h)
    view_base = (np.repeat(np.arange(m), k) * (h * w)).reshape(1, m * k, 1)
    col_idx = (flat.reshape(n, m * k, 4) + view_base).reshape(-1).astype(np.int32)

    slot_w = weights.data.reshape(n * m * k, 1)
    data_w = (cw * slot_w).astype(dtype).reshape(-1)
    nnz_row = m * k * 4

    # X: (cells, V * d_f) with volume-major columns
    x_mat = np.ascontiguousarray(feats.data.transpose(1, 3, 4, 0, 2)).reshape(cells, v_n * d_f)
    s_w = sp.csr_matrix((data_w, col_idx, np.arange(0, n * nnz_row + 1, nnz_row)),
                        shape=(n, cells))
    fused_cols = s_w @ x_mat  # (N, V*d_f)
    out = np.ascontiguousarray(
        fused_cols.reshape(n, v_n, d_f).transpose(1, 0, 2))

    def backward(g):
        g_cols = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(n, v_n * d_f)
        grad_feats = grad_loc = grad_w = None
        if _wants_grad(feats):
            gx = (s_w.T @ g_cols)  # (cells, V*d_f)
            grad_feats = np.ascontiguousarray(
                gx.reshape(m, h, w, v_n, d_f).transpose(3, 0, 4, 1, 2))
        if _wants_grad(weights) or _wants_grad(locations):
            # One dense product folds the (V, d_f) axes: with
            # P[q, cell] = sum_vc G[q, vc] X[cell, vc], every per-sample
            # contraction becomes a 4-corner gather from P.
            p_mat = g_cols @ x_mat.T  # (N, cells)
            rows = np.repeat(np.arange(n), m * k)[:, None]  # (N*M*K, 1)
            corners = p_mat[rows, col_idx.reshape(-1, 4)]   # (N*M*K, 4)
            if _wants_grad(weights):
                grad_w = (corners * cw).sum(axis=1).reshape(n, m, k).astype(weights.dtype)
            if _wants_grad(locations):
                grad_loc = np.empty((n, m, k, 2), dtype=locations.dtype)
                slot = weights.data.reshape(n, m, k)
                grad_loc[..., 0] = (corners * du).sum(axis=1).reshape(n, m, k) * slot
                grad_loc[..., 1] = (corners * dv).sum(axis=1).reshape(n, m, k) * slot
        return grad_feats, grad_loc, grad_w

    return _make(out, (feats, locations, weights), backward, "deform_fuse")


# -- compression into the conditioning vector ------------------------------------------


def channel_pool(fused: Tensor, mode: str = "mean") -> Tensor:
    """Pool the fused volume over its channel axis.

    Accepts (d_f, n_x, n_y, n_z) for a single volume or (V, N, d_f) batched.
    """
    axis = -1 if fused.ndim == 3 else 0
    if mode == "mean":
        return reduce_mean(fused, axis=axis)
    if mode == "max":
        return reduce_max(fused, axis=axis)
    raise ValueError(f"unknown pooling mode {mode!r} (use mean or max)")


def height_pool(fused: Tensor, counts: tuple[int, int, int],
                mode: str = "mean") -> Tensor:
    """Experimental alternative: pool over the vertical (z) axis instead of
    channels; output is (V, n_x * n_y * d_f)."""
    v, n, d_f = fused.shape
    nx, ny, nz = counts
    vol = fused.reshape((v, nx, ny, nz, d_f))
    pooled = reduce_mean(vol, axis=3) if mode == "mean" else reduce_max(vol, axis=3)
    return pooled.reshape((v, nx * ny * d_f))


def assemble_conditioning(pooled: Tensor, states: Tensor) -> Tensor:
    """Concatenate per-step pooled features with robot states, time-major.

    pooled: (B, T_obs, L)   states: (B, T_obs, state_dim)
    Returns (B, T_obs * (L + state_dim)).
    """
    if pooled.ndim != 3 or states.ndim != 3 or pooled.shape[:2] != states.shape[:2]:
        raise ValueError(f"pooled {pooled.shape} and states {states.shape} disagree "
                         f"on (batch, observation steps)")
    b, t, _ = pooled.shape
    block = concat([pooled, states], axis=2)
    return block.reshape((b, t * block.shape[2]))


# -- full module -------------------------------------------------------------------------


class OmniFeatureGenerator(Module):
    """Encoder + query table + offset/weight heads + deformable fusion.

    The offset and weight heads carry one slot per camera in the rig
    universe, keyed by camera identity, so switching the active subset
    (e.g. fine-tuning on a held-out view) changes no parameter shapes.
    """

    def __init__(self, grid: BevGrid, rig: list[Camera], active: list[str],
                 embed_dim: int, feat_dim: int, samples_per_view: int,
                 encoder_widths: tuple[int, ...], encoder_strides: tuple[int, ...],
                 rng: CounterRng, query_mode: str = "table",
                 pool_mode: str = "mean", margin: float = 0.5,
                 encoder_kernels: tuple[int, ...] | None = None,
                 pool_axis: str = "channel"):
        if pool_axis not in ("channel", "height"):
            raise ValueError(f"pool_axis must be channel or height, got {pool_axis!r}")
        self.pool_axis = pool_axis
        self.grid = grid
        self.rig = list(rig)
        self.rig_names = [c.name for c in rig]
        self.embed_dim = embed_dim
        self.feat_dim = feat_dim
        self.samples_per_view = samples_per_view
        self.pool_mode = pool_mode
        self.margin = margin
        self.query_mode = query_mode
        stride = rig[0].feature_stride
        self.encoder = ViewEncoder(feat_dim, encoder_widths, encoder_strides,
                                   stride, rng.split("encoder"),
                                   kernels=encoder_kernels)
        n = grid.num_points
        if query_mode == "table":
            self.queries = Tensor(rng.split("queries").normal((n, embed_dim)) * 0.02,
                                  requires_grad=True)
            self.query_net = None
        elif query_mode == "mlp":
            self.queries = None
            self.query_pe = _positional_features(grid)
            pe_dim = self.query_pe.shape[1]
            qrng = rng.split("query_net")
            self.query_net = [Linear(pe_dim, embed_dim, qrng.split("0")),
                              Linear(embed_dim, embed_dim, qrng.split("1"))]
        else:
            raise ValueError(f"unknown query_mode {query_mode!r} (use table or mlp)")
        m_total = len(rig)
        k = samples_per_view
        self.offset_head = Linear(embed_dim, m_total * k * 2, rng.split("offset"),
                                  zero_init=True)
        self.offset_head.bias.data = _ring_bias(m_total, k).astype(
            self.offset_head.bias.dtype)
        self.weight_head = Linear(embed_dim, m_total * k, rng.split("weight"),
                                  zero_init=True)
        self.set_active_cameras(active)

    def set_active_cameras(self, names: list[str]) -> None:
        missing = [nm for nm in names if nm not in self.rig_names]
        if missing:
            raise ValueError(f"cameras {missing} not in rig {self.rig_names}")
        self._active_names = list(names)
        self._active_slots = np.array([self.rig_names.index(nm) for nm in names])
        cams = [self.rig[i] for i in self._active_slots]
        self._table = project_grid(cams, self.grid, margin=self.margin)

    @property
    def active_cameras(self) -> list[str]:
        return list(self._active_names)

    @property
    def projection_table(self) -> ProjectionTable:
        return self._table

    def query_embeddings(self) -> Tensor:
        if self.query_net is None:
            return self.queries
        h = gelu(self.query_net[0](Tensor(self.query_pe)))
        return self.query_net[1](h)

    def _head_outputs(self, queries: Tensor):
        """Offsets (N, M_active, K, 2) and masked weights (N, M_active, K)."""
        n = self.grid.num_points
        k = self.samples_per_view
        m_total = len(self.rig)
        off = self.offset_head(queries).reshape((n, m_total, k, 2))
        logit = self.weight_head(queries).reshape((n, m_total, k))
        sl = self._active_slots
        if len(sl) != m_total or not np.array_equal(sl, np.arange(m_total)):
            off = off[:, sl]
            logit = logit[:, sl]
        m = len(sl)
        valid = self._table.valid  # (N, M)
        slot_valid = np.repeat(valid[:, :, None], k, axis=2)
        weights = masked_softmax_weights(logit.reshape((n, m * k)),
                                         slot_valid.reshape(n, m * k))
        return off, weights.reshape((n, m, k)), slot_valid

    def sample_locations(self, queries: Tensor | None = None):
        """s_ijk = r_ij + dp_ijk in feature-map coordinates (Tensor (N, M, K, 2))."""
        q = self.query_embeddings() if queries is None else queries
        off, _, _ = self._head_outputs(q)
        base = self._table.uv[:, :, None, :]  # (N, M, 1, 2)
        return off + Tensor(base.astype(off.dtype))

    def fuse(self, images: Tensor) -> Tensor:
        """Images (V, M, 3, H, W) -> fused BEV features (V, N, d_f)."""
        m = len(self._active_slots)
        if images.shape[1] != m:
            raise ValueError(f"got {images.shape[1]} views, active rig has {m}")
        feats = encode_views(self.encoder, images)
        q = self.query_embeddings()
        off, weights, _ = self._head_outputs(q)
        locations = off + Tensor(self._table.uv[:, :, None, :].astype(off.dtype))
        return deform_fuse(feats, locations, weights, self._table.valid)

    def conditioning(self, images: Tensor, states: Tensor) -> Tensor:
        """(B, T, M, 3, H, W) images + (B, T, sd) states -> (B, T*(N+sd))."""
        if images.ndim != 6:
            raise ValueError(f"expected (B, T, M, 3, H, W) images, got {images.shape}")
        b, t = images.shape[0], images.shape[1]
        fused = self.fuse(images.reshape((b * t,) + images.shape[2:]))
        if self.pool_axis == "height":
            pooled = height_pool(fused, self.grid.counts, self.pool_mode)
        else:
            pooled = channel_pool(fused, self.pool_mode)  # (B*T, N)
        return assemble_conditioning(pooled.reshape((b, t, pooled.shape[1])), states)

    @property
    def conditioning_length(self) -> int:
        if self.pool_axis == "height":
            nx, ny, _ = self.grid.counts
            return nx * ny * self.feat_dim
        return self.grid.num_points

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = {}
        base = prefix or ""
        params.update(self.encoder.named_parameters(f"{base}encoder."))
        if self.query_net is None:
            params[f"{base}queries"] = self.queries
        else:
            params.update(self.query_net[0].named_parameters(f"{base}query_net.0."))
            params.update(self.query_net[1].named_parameters(f"{base}query_net.1."))
        params.update(self.offset_head.named_parameters(f"{base}offset_head."))
        params.update(self.weight_head.named_parameters(f"{base}weight_head."))
        return params


def _ring_bias(m_total: int, k: int, radius: float = 1.0) -> np.ndarray:
    """Initial offsets on a fixed ring so training starts near plain
    projection sampling."""
    angles = 2.0 * np.pi * np.arange(k) / max(k, 1)
    ring = np.stack([np.cos(angles), np.sin(angles)], axis=-1) * radius
    return np.tile(ring, (m_total, 1, 1)).reshape(-1)


def _positional_features(grid: BevGrid, freqs: int = 8) -> np.ndarray:
    """Sinusoidal features of normalized voxel-center coordinates."""
    pts = grid.reference_points
    lo = np.array([grid.x_range[0], grid.y_range[0], grid.z_range[0]])
    hi = np.array([grid.x_range[1], grid.y_range[1], grid.z_range[1]])
    unit = (pts - lo) / (hi - lo)
    bands = 2.0 ** np.arange(freqs) * np.pi
    ang = unit[:, :, None] * bands[None, None, :]
    feat = np.concatenate([np.sin(ang), np.cos(ang)], axis=2)
    return feat.reshape(pts.shape[0], -1).astype(np.float64)
