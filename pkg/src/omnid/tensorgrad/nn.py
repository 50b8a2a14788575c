"""Small neural-network building blocks on top of the autodiff tensors."""

from __future__ import annotations

import numpy as np

from .rng import CounterRng
from .tensor import Tensor, conv2d, get_default_dtype, matmul, reduce_mean, sqrt


class Module:
    """Base class; parameters are discovered by attribute walk, sorted by name
    so traversal (and therefore checkpoint layout and update order) is
    deterministic."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name in sorted(vars(self)):
            value = getattr(self, name)
            key = f"{prefix}{name}" if prefix else name
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(prefix=key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(prefix=f"{key}.{i}."))
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters(prefix).items()}

    def load_state(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        params = self.named_parameters(prefix)
        missing = sorted(set(params) - set(arrays))
        if missing:
            raise KeyError(f"checkpoint missing parameters: {missing[:4]}{'...' if len(missing) > 4 else ''}")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=p.data.dtype)
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter '{name}' shape mismatch: "
                                 f"checkpoint {arr.shape} vs model {p.data.shape}")
            p.data = arr.copy()


def kaiming_uniform(rng: CounterRng, shape, fan_in: int, dtype=None) -> Tensor:
    bound = float(np.sqrt(6.0 / max(fan_in, 1)))
    data = (rng.uniform(shape) * 2.0 - 1.0) * bound
    return Tensor(data, requires_grad=True, dtype=dtype or get_default_dtype())


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: CounterRng,
                 zero_init: bool = False, dtype=None):
        dtype = dtype or get_default_dtype()
        if zero_init:
            self.weight = Tensor(np.zeros((in_dim, out_dim)), requires_grad=True, dtype=dtype)
        else:
            self.weight = kaiming_uniform(rng, (in_dim, out_dim), fan_in=in_dim, dtype=dtype)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int | tuple[int, int],
                 rng: CounterRng, stride: int = 1, padding: int = 0,
                 zero_init: bool = False, dtype=None):
        dtype = dtype or get_default_dtype()
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        fan_in = in_ch * kh * kw
        if zero_init:
            self.weight = Tensor(np.zeros((out_ch, in_ch, kh, kw)),
                                 requires_grad=True, dtype=dtype)
        else:
            self.weight = kaiming_uniform(rng, (out_ch, in_ch, kh, kw),
                                          fan_in=fan_in, dtype=dtype)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True, dtype=dtype)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, axis: int = -1,
               eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis`` then apply a learned affine map."""
    mu = reduce_mean(x, axis=axis, keepdims=True)
    centered = x + mu * -1.0
    var = reduce_mean(centered * centered, axis=axis, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias
