"""Dense tensors with reverse-mode automatic differentiation.

Tensors wrap a row-major numpy array plus an optional backward rule that
links them into an implicit computation graph.  Calling ``backward()`` on a
scalar walks the graph in exact reverse topological order and accumulates
gradients into every tensor that requires them.

Two precisions are supported: float32 (training) and float64 (verification;
finite-difference oracles are unreliable in float32).  The default dtype is
float32 and can be switched globally or within a ``dtype_scope``.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_DEFAULT_DTYPE = np.float32
_DEBUG_CHECKS = False

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class ShapeError(ValueError):
    """Raised when operand shapes are invalid for an operation."""


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def dtype_scope(dtype):
    """Temporarily switch the default dtype (e.g. float64 for gradient checks)."""
    old = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op output is asserted finite (NaN/Inf detection)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


class Tensor:
    """A numpy-backed tensor that records how it was produced.

    ``_parents`` and ``_backward`` are only set on non-leaf tensors created
    by ops; ``_backward(grad)`` returns one gradient array (or None) per
    parent, aligned with ``_parents``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: tuple = (), _backward: Callable | None = None,
                 _op: str = ""):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and isinstance(data, np.ndarray) \
                and data.dtype in (np.float32, np.float64):
            arr = data  # keep existing float precision
        else:
            arr = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag}, op={self._op or 'leaf'})"

    # -- autodiff ------------------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not _wants_grad(parent):
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=parent.data.dtype, copy=True)
                else:
                    parent.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self.dtype), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take_slice(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype if dtype is not None else _DEFAULT_DTYPE),
                  requires_grad=requires_grad, dtype=dtype)


def ones(shape, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype if dtype is not None else _DEFAULT_DTYPE),
                  requires_grad=requires_grad, dtype=dtype)


def _not_scalar(t: Tensor):
    raise ShapeError(f"item() requires a single-element tensor, got shape {t.shape}")


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo_order(root: Tensor) -> list[Tensor]:
    """Topological order of the subgraph below ``root`` (iterative DFS)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and _wants_grad(parent):
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    track = any(_wants_grad(p) for p in parents)
    if not track:
        return Tensor(data, dtype=data.dtype)
    return Tensor(data, dtype=data.dtype, _parents=tuple(parents), _backward=backward, _op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=_infer_dtype(b)))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=_infer_dtype(b)))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if _wants_grad(a) else None
        gb = _unbroadcast(g * a.data, b.shape) if _wants_grad(b) else None
        return ga, gb

    return _make(out, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=_infer_dtype(b)))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if _wants_grad(a) else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if _wants_grad(b) else None
        return ga, gb

    return _make(out, (a, b), backward, "div")


def _infer_dtype(other) -> np.dtype:
    return other.data.dtype if isinstance(other, Tensor) else _DEFAULT_DTYPE


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    out = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(out, (a,), backward, "pow")


# -- transcendental / activation -------------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _make(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _make(out, (a,), backward, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def backward(g):
        return (g * (0.5 / out),)

    return _make(out, (a,), backward, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), backward, "tanh")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)

    def backward(g):
        return (g * (a.data > 0.0),)

    return _make(out, (a,), backward, "relu")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = (x * cdf).astype(x.dtype)

    def backward(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _make(out, (a,), backward, "gelu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), backward, "softmax")


def where_mask(mask, a: Tensor, fill: float) -> Tensor:
    """Keep ``a`` where the boolean mask holds, else the constant ``fill``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        mask = np.broadcast_to(mask, a.shape)
    out = np.where(mask, a.data, a.data.dtype.type(fill))

    def backward(g):
        return (np.where(mask, g, 0.0),)

    return _make(out, (a,), backward, "where_mask")


# -- reductions -----------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.data.dtype),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).astype(a.data.dtype),)

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).astype(a.data.dtype),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.shape).astype(a.data.dtype),)

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward, "mean")


def reduce_max(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.max(axis=axis, keepdims=keepdims)

    def backward(g):
        out_exp = out if (keepdims or axis is None) else np.expand_dims(out, axis)
        hit = (a.data == out_exp)
        counts = hit.sum(axis=axis, keepdims=True) if axis is not None else hit.sum()
        g_exp = g if (keepdims or axis is None) else np.expand_dims(g, axis)
        # ties share the gradient evenly
        return ((hit * g_exp / counts).astype(a.data.dtype),)

    return _make(np.asarray(out, dtype=a.data.dtype), (a,), backward, "max")


# -- shape manipulation -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _make(out, (a,), backward, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def backward(g):
        return (np.transpose(g, inv),)

    return _make(out, (a,), backward, "transpose")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of an empty tensor list")
    base = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
                i != (axis % len(base)) and other[i] != base[i] for i in range(len(base))):
            raise ShapeError(f"concat shapes incompatible along axis {axis}: "
                             f"{[t.shape for t in ts]}")
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, ts, backward, "concat")


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(ts, axis=axis)


def take_slice(a: Tensor, index) -> Tensor:
    """Basic (view-style) indexing with gradient scatter on the way back."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), backward, "slice")


# -- linear algebra ----------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b))
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = gb = None
        if _wants_grad(a):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if _wants_grad(b):
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


# -- 2D convolution (im2col + matmul fast path) ---------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int):
    b, c, h, w = x.shape
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    hp, wp = x.shape[2], x.shape[3]
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    sb, sc, sr, scol = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(b, c, kh, kw, ho, wo),
        strides=(sb, sc, sr, scol, sr * sh, scol * sw), writeable=False)
    cols = np.ascontiguousarray(view.transpose(0, 4, 5, 1, 2, 3)).reshape(b * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(grad_cols: np.ndarray, x_shape, kh, kw, sh, sw, ph, pw, ho, wo):
    b, c, h, w = x_shape
    gx = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=grad_cols.dtype)
    gc = grad_cols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += gc[:, :, i, j]
    if ph or pw:
        gx = gx[:, :, ph:ph + h, pw:pw + w]
    return gx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int | tuple = 1, padding: int | tuple = 0) -> Tensor:
    """2D cross-correlation over (B, C, H, W) with (O, C, kh, kw) filters."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d shapes incompatible: input {x.shape}, weight {weight.shape}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    o, c, kh, kw = weight.shape
    b = x.shape[0]
    cols, ho, wo = _im2col(x.data, kh, kw, sh, sw, ph, pw)
    w2 = weight.data.reshape(o, c * kh * kw)
    out2 = cols @ w2.T
    if bias is not None:
        out2 += bias.data
    out = out2.reshape(b, ho, wo, o).transpose(0, 3, 1, 2)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * ho * wo, o)
        gx = gw = gb = None
        if _wants_grad(x):
            gx = _col2im(g2 @ w2, x.shape, kh, kw, sh, sw, ph, pw, ho, wo)
        if _wants_grad(weight):
            gw = (g2.T @ cols).reshape(weight.shape)
        if bias is not None and _wants_grad(bias):
            gb = g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    return _make(np.ascontiguousarray(out), parents, backward, "conv2d")


# -- op-kind dispatch ------------------------------------------------------------------

OP_KINDS = {
    "add": add,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "conv2d": conv2d,
    "softmax": softmax,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "tanh": tanh,
    "relu": relu,
    "gelu": gelu,
    "sum": reduce_sum,
    "mean": reduce_mean,
    "max": reduce_max,
    "concat": concat,
    "reshape": reshape,
    "transpose": transpose,
}


def apply_op(op_kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch an operation by name (shape validation lives in each op)."""
    if op_kind not in OP_KINDS:
        raise ValueError(f"unknown op kind '{op_kind}'; known: {sorted(OP_KINDS)}")
    return OP_KINDS[op_kind](*inputs, **kwargs)
