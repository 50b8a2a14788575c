from .tensor import (
    Tensor,
    ShapeError,
    tensor,
    zeros,
    ones,
    concat,
    stack,
    matmul,
    conv2d,
    softmax,
    where_mask,
    relu,
    gelu,
    tanh,
    exp,
    log,
    sqrt,
    apply_op,
    OP_KINDS,
    set_default_dtype,
    get_default_dtype,
    dtype_scope,
    set_debug_checks,
)
from .rng import CounterRng
from .nn import Module, Linear, Conv2d, layer_norm
from .optim import AdamW, WarmupCosineSchedule, NumericError
from .checkpoint import save_tensors, load_tensors, CheckpointError

__all__ = [
    "Tensor", "ShapeError", "tensor", "zeros", "ones", "concat", "stack",
    "matmul", "conv2d", "softmax", "where_mask", "relu", "gelu", "tanh",
    "exp", "log", "sqrt", "apply_op", "OP_KINDS",
    "set_default_dtype", "get_default_dtype", "dtype_scope", "set_debug_checks",
    "CounterRng", "Module", "Linear", "Conv2d", "layer_norm",
    "AdamW", "WarmupCosineSchedule", "NumericError",
    "save_tensors", "load_tensors", "CheckpointError",
]
