"""Minimal dense-tensor library with reverse-mode autodiff."""

from rvt.numerics.functional import (
    avg_pool2d,
    conv2d,
    cross_entropy,
    gelu,
    layer_norm,
    linear,
    log_softmax,
    replicate_pad_to_multiple,
    softmax,
)
from rvt.numerics.gradcheck import finite_diff_check, numerical_gradient, relative_error
from rvt.numerics.tensor import (
    Tensor,
    add,
    backward,
    concat,
    div,
    exp,
    getitem,
    log,
    matmul,
    mean,
    mul,
    neg,
    power,
    reshape,
    sqrt,
    sub,
    take,
    tensor,
    transpose,
    tsum,
)

__all__ = [
    "Tensor",
    "add",
    "avg_pool2d",
    "backward",
    "concat",
    "conv2d",
    "cross_entropy",
    "div",
    "exp",
    "finite_diff_check",
    "gelu",
    "getitem",
    "layer_norm",
    "linear",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "neg",
    "numerical_gradient",
    "power",
    "relative_error",
    "replicate_pad_to_multiple",
    "reshape",
    "softmax",
    "sqrt",
    "sub",
    "take",
    "tensor",
    "transpose",
    "tsum",
]
