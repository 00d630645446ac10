"""Layer-level ops built from the primitives in :mod:`tensor` and :mod:`conv`."""

from __future__ import annotations

import numpy as np

from . import conv as _conv
from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    flatten,
    leaky_relu,
    matmul,
    mean,
    mul,
    pad,
    relu,
    reshape,
    sqrt,
    sub,
    sum_,
    tanh,
    transpose,
    unsqueeze,
)

__all__ = [
    "dense",
    "conv1d",
    "conv_transpose1d",
    "conv2d",
    "batch_norm",
    "relu",
    "leaky_relu",
    "tanh",
    "flatten",
    "concat",
    "unsqueeze",
    "mean",
    "l2_norm",
]


def dense(x, weight, bias=None) -> Tensor:
    """x @ weight.T + bias with weight laid out (out_features, in_features)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"dense: input {x.shape} incompatible with weight {weight.shape}")
    y = matmul(x, transpose(weight))
    if bias is not None:
        y = add(y, bias)
    return y


def _bias4(y: Tensor, bias) -> Tensor:
    if bias is None:
        return y
    return add(y, reshape(as_tensor(bias), (1, -1, 1, 1)))


def conv2d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"conv2d: expected (N, C, H, W) input, got {x.shape}")
    if padding:
        x = pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if isinstance(stride, int):
        stride = (stride, stride)
    return _bias4(_conv.conv2d(x, weight, stride), bias)


def conv1d(x, weight, bias=None, stride: int = 1) -> Tensor:
    """x: (N, C, L), weight: (O, C, K)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv1d: input {x.shape} incompatible with kernel {weight.shape}")
    y = _conv.conv2d(unsqueeze(x, 2), unsqueeze(weight, 2), (1, stride))
    y = _bias4(y, bias)
    return reshape(y, (y.shape[0], y.shape[1], y.shape[3]))


def conv_transpose1d(x, weight, bias=None) -> Tensor:
    """x: (N, Cin, L), weight: (Cin, Cout, K) -> (N, Cout, L + K - 1)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv_transpose1d: input {x.shape} incompatible with kernel {weight.shape}")
    n, _, length = x.shape
    cout, k = weight.shape[1], weight.shape[2]
    y = _conv.conv2d_input_grad(unsqueeze(x, 2), unsqueeze(weight, 2), (1, 1), (n, cout, 1, length + k - 1))
    y = _bias4(y, bias)
    return reshape(y, (n, cout, length + k - 1))


def batch_norm(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation over every axis except axis 1.

    In training mode batch statistics are used and the running buffers are
    updated in place (population variance); in eval mode the buffers are used.
    """
    x = as_tensor(x)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if training:
        mu = mean(x, axes, keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(-1)
    else:
        centered = sub(x, Tensor(running_mean.reshape(bshape).astype(x.dtype)))
        var = Tensor(running_var.reshape(bshape).astype(x.dtype))
    xhat = mul(centered, sqrt(add(var, eps)) ** -1.0)
    return add(mul(xhat, reshape(as_tensor(gamma), bshape)), reshape(as_tensor(beta), bshape))


def l2_norm(x, axis=None) -> Tensor:
    """Euclidean norm; with ``axis=None`` per sample over all non-batch axes."""
    x = as_tensor(x)
    if axis is None:
        axis = tuple(range(1, x.ndim))
    return sqrt(sum_(mul(x, x), axis))
