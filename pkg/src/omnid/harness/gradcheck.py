"""Finite-difference verification suites over micro configurations.

Every suite compares analytic gradients against central differences in
float64 and reports one (parameter, max relative error) row per tensor.
The relative error for a parameter is max|analytic - numeric| normalized by
max(|numeric|) over that tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import diffusion as dif
from .. import ofg
from ..geometry import BevGrid, build_grid, look_at_camera
from ..tensorgrad import Tensor, apply_op
from ..tensorgrad.rng import CounterRng

OPS_TOL = 1e-6
OFG_TOL = 1e-4
DIFFUSION_TOL = 1e-4
END2END_TOL = 1e-4

SCOPES = ("ops", "ofg", "diffusion", "end2end")


@dataclass
class CheckRow:
    scope: str
    name: str
    max_rel_err: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(float(np.abs(numeric).max()), 1e-12)
    return float(np.abs(analytic - numeric).max()) / scale


def fd_check(loss_fn, leaves: dict[str, Tensor], h: float = 1e-5,
             tolerance: float = OFG_TOL, scope: str = "ofg") -> list[CheckRow]:
    """Backprop ``loss_fn()`` once, then finite-difference every leaf entry."""
    for t in leaves.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}
    rows = []
    for name, t in leaves.items():
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            hi = loss_fn().item()
            flat[i] = keep - h
            lo = loss_fn().item()
            flat[i] = keep
            numeric[i] = (hi - lo) / (2.0 * h)
        rows.append(CheckRow(scope, name, relative_error(
            analytic[name].reshape(-1), numeric), tolerance))
    return rows


def _rand(rng, shape, lo=-1.0, hi=1.0):
    return rng.uniform(shape) * (hi - lo) + lo


def check_ops(trials: int = 100, seed: int = 0) -> list[CheckRow]:
    """Randomized small-shape gradient checks across the op registry."""
    op_cases = {
        "add": lambda r: [Tensor(_rand(r, (3, 4)), True), Tensor(_rand(r, (3, 4)), True)],
        "mul": lambda r: [Tensor(_rand(r, (3, 4)), True), Tensor(_rand(r, (1, 4)), True)],
        "div": lambda r: [Tensor(_rand(r, (2, 3)), True),
                          Tensor(_rand(r, (2, 3), 0.5, 2.0), True)],
        "matmul": lambda r: [Tensor(_rand(r, (3, 4)), True), Tensor(_rand(r, (4, 2)), True)],
        "conv2d": lambda r: [Tensor(_rand(r, (2, 2, 5, 5)), True),
                             Tensor(_rand(r, (3, 2, 3, 3)), True),
                             Tensor(_rand(r, (3,)), True)],
        "softmax": lambda r: [Tensor(_rand(r, (3, 5)), True)],
        "exp": lambda r: [Tensor(_rand(r, (4, 3)), True)],
        "log": lambda r: [Tensor(_rand(r, (4, 3), 0.5, 3.0), True)],
        "sqrt": lambda r: [Tensor(_rand(r, (4, 3), 0.5, 3.0), True)],
        "tanh": lambda r: [Tensor(_rand(r, (4, 3)), True)],
        # keep relu inputs off the kink and max entries well separated so
        # central differences stay on one smooth piece
        "relu": lambda r: [Tensor(np.sign(_rand(r, (4, 3))) * (_rand(r, (4, 3), 0.05, 1.0)), True)],
        "gelu": lambda r: [Tensor(_rand(r, (4, 3)), True)],
        "sum": lambda r: [Tensor(_rand(r, (3, 4)), True)],
        "mean": lambda r: [Tensor(_rand(r, (3, 4)), True)],
        "max": lambda r: [Tensor(_rand(r, (3, 4), -0.1, 0.1) + np.arange(12).reshape(3, 4) * 0.5, True)],
        "reshape": lambda r: [Tensor(_rand(r, (3, 4)), True)],
        "transpose": lambda r: [Tensor(_rand(r, (3, 4)), True)],
    }
    op_kwargs = {"mean": {"axis": 1}, "sum": {"axis": 0}, "max": {"axis": 1},
                 "reshape": {"shape": (4, 3)}, "transpose": {"axes": (1, 0)},
                 "conv2d": {"stride": 2, "padding": 1}, "softmax": {"axis": -1}}
    rng = CounterRng(seed)
    per_op = max(1, trials // len(op_cases))
    rows = []
    for name, builder in op_cases.items():
        worst = 0.0
        for trial in range(per_op):
            trial_rng = rng.split(f"{name}/{trial}")
            inputs = builder(trial_rng)
            proj = None

            def loss_fn():
                out = apply_op(name, *inputs, **op_kwargs.get(name, {}))
                nonlocal proj
                if proj is None:
                    proj = trial_rng.normal(out.shape)
                return (out * Tensor(proj)).sum()

            leaves = {f"x{i}": t for i, t in enumerate(inputs)}
            for row in fd_check(loss_fn, leaves, tolerance=OPS_TOL, scope="ops"):
                worst = max(worst, row.max_rel_err)
        rows.append(CheckRow("ops", name, worst, OPS_TOL))
    return rows


def _micro_ofg(seed: int = 0):
    """Tiny fusion module on an 8-point grid with two 8x8 views (float64).

    The heads are perturbed off their zero initialization so gradients reach
    the query embeddings through both the offset and the weight paths.
    """
    rng = CounterRng(seed)
    grid = build_grid([(0.0, 0.4), (-0.2, 0.2), (0.0, 0.2)], (0.2, 0.2, 0.1))
    cams = [
        look_at_camera("P", (0.2, 0.0, 0.6), (0.2, 0.0, 0.05), 10.0, 10.0, 8, 8,
                       feature_stride=2),
        look_at_camera("Q", (0.6, 0.3, 0.5), (0.2, 0.0, 0.05), 10.0, 10.0, 8, 8,
                       feature_stride=2),
    ]
    module = ofg.OmniFeatureGenerator(
        grid, cams, ["P", "Q"], embed_dim=6, feat_dim=3, samples_per_view=2,
        encoder_widths=(4, 3), encoder_strides=(2, 1), rng=rng.split("module"))
    h_rng = rng.split("head_jitter")
    for head in (module.offset_head, module.weight_head):
        head.weight.data = head.weight.data + h_rng.normal(head.weight.shape) * 0.05
    images = _rand(rng.split("imgs"), (1, 2, 3, 8, 8), 0.0, 1.0)
    return module, images


def _nudge_offsets(module: ofg.OmniFeatureGenerator, rng: CounterRng) -> None:
    """Keep every sample location off the bilinear lattice lines so central
    differences stay on one smooth piece."""
    for _ in range(50):
        locs = module.sample_locations().numpy()
        frac = np.abs(locs - np.round(locs))
        if frac.min() > 5e-3:
            return
        bias = module.offset_head.bias
        bias.data = bias.data + (rng.uniform(bias.data.shape) * 0.02 - 0.01)
    raise RuntimeError("could not move sample locations off lattice lines")


def check_ofg(seed: int = 0) -> list[CheckRow]:
    module, images = _micro_ofg(seed)
    rng = CounterRng(seed + 77)
    _nudge_offsets(module, rng.split("nudge"))
    img_t = Tensor(images, requires_grad=True)
    proj = rng.normal((1, module.grid.num_points, module.feat_dim))

    def loss_fn():
        return (module.fuse(img_t) * Tensor(proj)).sum()

    leaves = dict(module.named_parameters())
    leaves["images"] = img_t
    return fd_check(loss_fn, leaves, tolerance=OFG_TOL, scope="ofg")


def _jitter_params(module, rng: CounterRng, scale: float = 0.15) -> None:
    """Move every parameter to a generic point (zero-initialized layers would
    otherwise hide entire gradient paths)."""
    for name, p in sorted(module.named_parameters().items()):
        p.data = p.data + rng.split(name).normal(p.data.shape) * scale


def check_diffusion(seed: int = 0) -> list[CheckRow]:
    rng = CounterRng(seed)
    den = dif.Denoiser(2, 4, 5, rng.split("den"), width=6, blocks=1, time_dim=4)
    _jitter_params(den, rng.split("jitter"))
    schedule = dif.build_schedule("squared-cosine", 10)
    a0 = rng.normal((2, 4, 2))
    eps = rng.normal((2, 4, 2))
    t = np.array([3, 7])
    cond = Tensor(rng.normal((2, 5)), requires_grad=True)

    def loss_fn():
        return dif.diffusion_loss(den, schedule, a0, cond, rng, t=t, eps=eps)

    leaves = dict(den.named_parameters())
    leaves["cond"] = cond
    return fd_check(loss_fn, leaves, tolerance=DIFFUSION_TOL, scope="diffusion")


def check_end2end(seed: int = 0) -> list[CheckRow]:
    """Loss gradient w.r.t. image pixels and every parameter, through fusion,
    compression, conditioning, and the denoiser."""
    module, images = _micro_ofg(seed)
    rng = CounterRng(seed + 5)
    _nudge_offsets(module, rng.split("nudge"))
    img_t = Tensor(images[None], requires_grad=True)  # (B=1, T=1, M, 3, 8, 8)
    states = Tensor(rng.normal((1, 1, 2)))
    cond_dim = module.grid.num_points + 2
    den = dif.Denoiser(2, 4, cond_dim, rng.split("den"), width=6, blocks=1, time_dim=4)
    _jitter_params(den, rng.split("jitter"))
    schedule = dif.build_schedule("squared-cosine", 10)
    a0 = rng.normal((1, 4, 2))
    eps = rng.normal((1, 4, 2))
    t = np.array([4])

    def loss_fn():
        cond = module.conditioning(img_t, states)
        return dif.diffusion_loss(den, schedule, a0, cond, rng, t=t, eps=eps)

    leaves = dict(module.named_parameters())
    leaves.update({f"denoiser.{k}": v for k, v in den.named_parameters().items()})
    leaves["images"] = img_t
    rows = fd_check(loss_fn, leaves, tolerance=END2END_TOL, scope="end2end")
    grad_nonzero = float(np.abs(img_t.grad).max()) > 0.0 if img_t.grad is not None else False
    rows.append(CheckRow("end2end", "image_gradient_nonzero",
                         0.0 if grad_nonzero else 1.0, 0.5))
    return rows


def run_scope(scope: str, seed: int = 0) -> tuple[bool, list[CheckRow]]:
    from ..tensorgrad.tensor import dtype_scope
    with dtype_scope(np.float64):  # central differences need 64-bit
        if scope == "ops":
            rows = check_ops(seed=seed)
        elif scope == "ofg":
            rows = check_ofg(seed=seed)
        elif scope == "diffusion":
            rows = check_diffusion(seed=seed)
        elif scope == "end2end":
            rows = check_end2end(seed=seed)
        else:
            raise ValueError(f"unknown gradcheck scope {scope!r}; known: {SCOPES}")
    return all(r.passed for r in rows), rows
