"""Dense tensors with tape-based reverse-mode differentiation."""
from .core import DEFAULT_DTYPE, Tape, Tensor, active_tape, as_tensor, backward
from .gradcheck import GradCheckReport, grad_check, grad_check_params, relative_error, sample_indices
from .ops import (
    activation,
    add,
    conv2d,
    conv_output_size,
    cross_entropy,
    div,
    dropout,
    gelu,
    global_avg_pool,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    pad2d,
    relu,
    reshape,
    roll,
    softmax,
    sub,
    transpose,
)
from .ops import sum as tsum

__all__ = [
    "DEFAULT_DTYPE", "Tape", "Tensor", "active_tape", "as_tensor", "backward",
    "GradCheckReport", "grad_check", "grad_check_params", "relative_error", "sample_indices",
    "activation", "add", "conv2d", "conv_output_size", "cross_entropy", "div", "dropout",
    "gelu", "global_avg_pool", "layer_norm", "matmul", "mean", "mul", "neg", "pad2d",
    "relu", "reshape", "roll", "softmax", "sub", "transpose", "tsum",
]
