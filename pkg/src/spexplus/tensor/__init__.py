from .core import (
    DEFAULT_DTYPE,
    AutodiffError,
    NonFiniteError,
    Tape,
    Tensor,
    add,
    backward,
    batch_norm_time,
    concat_channels,
    conv1d,
    conv1d_transpose,
    div,
    dot,
    exp,
    layer_norm_global,
    log,
    matvec,
    max_pool1d,
    mean_all,
    mean_time,
    mul,
    neg,
    no_grad,
    pad_time,
    pick,
    prelu,
    relu,
    repeat_time,
    set_debug_checks,
    slice_time,
    softmax,
    sqrt,
    sub,
    sum_all,
    sum_time,
)
from . import kernels

__all__ = [
    "DEFAULT_DTYPE", "AutodiffError", "NonFiniteError", "Tape", "Tensor",
    "add", "backward", "batch_norm_time", "concat_channels", "conv1d",
    "conv1d_transpose", "div", "dot", "exp", "layer_norm_global", "log",
    "matvec", "max_pool1d", "mean_all", "mean_time", "mul", "neg", "no_grad",
    "pad_time", "pick", "prelu", "relu", "repeat_time", "set_debug_checks",
    "slice_time", "softmax", "sqrt", "sub", "sum_all", "sum_time", "kernels",
]
