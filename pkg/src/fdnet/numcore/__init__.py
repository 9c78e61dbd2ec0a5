"""Minimal float64 tensor core with reverse-mode differentiation."""

from . import nn, ops
from .gradcheck import GradCheckReport, finite_diff_check, relative_error, resolution_floor
from .ops import (
    activation,
    batch_norm_infer,
    bilinear_resize,
    concat_channels,
    conv2d,
    eltwise,
    expand_channels,
    flatten_permute,
    layer_norm,
    linear,
    matmul,
    maximum,
    pool2d,
    relu,
    resize,
    scale,
    sigmoid,
    softmax_lastdim,
    transpose_last,
    tmean,
    tsum,
    unflatten_permute,
)
from .tensor import Tensor, as_tensor, backward, grad_enabled, no_grad

__all__ = [
    "GradCheckReport",
    "Tensor",
    "activation",
    "as_tensor",
    "backward",
    "batch_norm_infer",
    "bilinear_resize",
    "concat_channels",
    "conv2d",
    "eltwise",
    "expand_channels",
    "finite_diff_check",
    "flatten_permute",
    "grad_enabled",
    "layer_norm",
    "linear",
    "matmul",
    "maximum",
    "nn",
    "no_grad",
    "ops",
    "pool2d",
    "relative_error",
    "resolution_floor",
    "relu",
    "resize",
    "scale",
    "sigmoid",
    "softmax_lastdim",
    "tmean",
    "transpose_last",
    "tsum",
    "unflatten_permute",
]
