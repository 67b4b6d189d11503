"""Minimal reverse-mode autodiff over numpy arrays."""

from .tensor import (
    Tensor, Param, tensor, ShapeError, GraphConsumedError,
    no_grad, is_grad_enabled, scope, current_scope, record_tape,
    add, sub, mul, scale, matmul, relu, sigmoid, softmax_rows,
    reshape, transpose, concat, reduce_sum, reduce_mean, reduce_max,
    sum_all, backward, accumulate,
)
from .convops import conv2d, maxpool2x2, upsample_nearest2x, batchnorm
from .gradcheck import rel_error, finite_diff_check

__all__ = [
    "Tensor", "Param", "tensor", "ShapeError", "GraphConsumedError",
    "no_grad", "is_grad_enabled", "scope", "current_scope", "record_tape",
    "add", "sub", "mul", "scale", "matmul", "relu", "sigmoid", "softmax_rows",
    "reshape", "transpose", "concat", "reduce_sum", "reduce_mean",
    "reduce_max", "sum_all", "backward", "accumulate",
    "conv2d", "maxpool2x2", "upsample_nearest2x", "batchnorm",
    "rel_error", "finite_diff_check",
]
