"""Float64 tensors with tape-based reverse-mode autodiff, AdamW and checkpoint I/O."""

from .checkpoint import CheckpointError, load, save
from .gradcheck import check_gradients, numeric_grad, relative_error
from .optim import OptimizerState, adamw_step, clip_grad_norm, zero_grad
from .tensor import (
    DimensionError,
    NumericError,
    Tensor,
    add,
    add_constant,
    attention,
    backward,
    clear_tape,
    concat,
    cross_entropy,
    dropout,
    embedding,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    pool_spans,
    relu,
    reshape,
    scale,
    softmax,
    softmax_array,
    tensor_sum,
    tile_cols,
)

__all__ = [
    "adamw_step",
    "add",
    "add_constant",
    "attention",
    "backward",
    "check_gradients",
    "CheckpointError",
    "clear_tape",
    "clip_grad_norm",
    "concat",
    "cross_entropy",
    "DimensionError",
    "dropout",
    "embedding",
    "layer_norm",
    "linear",
    "load",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "numeric_grad",
    "NumericError",
    "OptimizerState",
    "pool_spans",
    "relative_error",
    "relu",
    "reshape",
    "save",
    "scale",
    "softmax",
    "softmax_array",
    "Tensor",
    "tensor_sum",
    "tile_cols",
    "zero_grad",
]
