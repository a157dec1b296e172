"""Minimal reverse-mode tensor library over numpy arrays."""

from rtfusion.tensor.core import Tensor, as_tensor, backward, build_tape, grad_enabled, no_grad
from rtfusion.tensor.ops import (
    abs,
    add,
    add_scalar,
    bilinear_interp,
    clamp_max,
    concat_channels,
    conv2d,
    conv_out_size,
    exp,
    flatten_spatial,
    gelu,
    index,
    layer_norm,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scalar_mul,
    sigmoid,
    softmax_lastdim,
    softplus,
    split_channels,
    sub,
    sum,
    transpose,
    unflatten_spatial,
)

__all__ = [
    "Tensor", "as_tensor", "backward", "build_tape", "grad_enabled", "no_grad",
    "abs", "add", "add_scalar", "bilinear_interp", "clamp_max", "concat_channels",
    "conv2d", "conv_out_size", "exp", "flatten_spatial", "gelu", "index", "layer_norm",
    "matmul", "mean", "mul", "relu", "reshape", "scalar_mul", "sigmoid",
    "softmax_lastdim", "softplus", "split_channels", "sub", "sum", "transpose",
    "unflatten_spatial",
]
