"""AdamW with decoupled weight decay, plus the warmup-cosine LR schedule."""

from __future__ import annotations

import math
import warnings

import numpy as np

from .tensor import Tensor


class NumericError(RuntimeError):
    """Raised on non-finite values in strict numeric paths."""


class AdamW:
    """Decoupled-weight-decay Adam with bias correction.

    Update per parameter p with gradient g:
        m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
        m_hat = m / (1 - b1^t);  v_hat = v / (1 - b2^t)
        p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p

    ``nan_policy`` is "strict" (raise on non-finite gradients) or "lenient"
    (skip the parameter with a warning).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-6, nan_policy: str = "strict"):
        if nan_policy not in ("strict", "lenient"):
            raise ValueError(f"nan_policy must be strict or lenient, got {nan_policy!r}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.nan_policy = nan_policy
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """Apply one update in place; parameters with no gradient are skipped."""
        lr = self.lr if lr is None else float(lr)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                if self.nan_policy == "strict":
                    raise NumericError(f"non-finite gradient for parameter '{name}'")
                warnings.warn(f"skipping non-finite gradient for '{name}'", RuntimeWarning)
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (lr * update).astype(p.data.dtype)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


class WarmupCosineSchedule:
    """Linear ramp 0 -> base_lr over the warmup, then cosine decay to 0."""

    def __init__(self, base_lr: float, warmup_steps: int, total_steps: int):
        if warmup_steps >= total_steps:
            raise ValueError(f"warmup_steps ({warmup_steps}) must be < total_steps ({total_steps})")
        if warmup_steps < 0 or base_lr < 0:
            raise ValueError("warmup_steps and base_lr must be nonnegative")
        self.base_lr = float(base_lr)
        self.warmup_steps = int(warmup_steps)
        self.total_steps = int(total_steps)

    def lr_at(self, step: int) -> float:
        if step < 0 or step > self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps}]")
        if step <= self.warmup_steps:
            if self.warmup_steps == 0:
                return self.base_lr
            return self.base_lr * step / self.warmup_steps
        progress = (step - self.warmup_steps) / (self.total_steps - self.warmup_steps)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))
