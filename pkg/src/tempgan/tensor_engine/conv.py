"""Strided, unpadded 2-D cross-correlation and its two adjoints.

The three ops differentiate into each other, which gives double backward
for free: the input-gradient of ``conv2d`` is ``conv2d_input_grad``, whose
own gradients are ``conv2d`` and ``conv2d_weight_grad``, and so on.
Padding lives in :func:`tensor.pad`; 1-D convolutions are height-1 2-D ones.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _make, as_tensor

__all__ = ["conv2d", "conv2d_input_grad", "conv2d_weight_grad", "conv_output_size"]


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    return (size - kernel) // stride + 1


def _windows(x: np.ndarray, kh: int, kw: int, stride) -> np.ndarray:
    # (N, C, Ho, Wo, kh, kw) view
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, :: stride[0], :: stride[1]]


def _fwd(x: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    _, _, kh, kw = w.shape
    win = _windows(x, kh, kw, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _input_grad(gy: np.ndarray, w: np.ndarray, stride, x_shape) -> np.ndarray:
    n, o, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    h, wd = x_shape[2], x_shape[3]
    if stride == (1, 1):
        dil = gy
    else:
        dil = np.zeros((n, o, (ho - 1) * stride[0] + 1, (wo - 1) * stride[1] + 1), dtype=gy.dtype)
        dil[:, :, :: stride[0], :: stride[1]] = gy
    bottom = h - dil.shape[2]
    right = wd - dil.shape[3]
    padded = np.pad(dil, ((0, 0), (0, 0), (kh - 1, bottom), (kw - 1, right)))
    flipped = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return _fwd(padded, flipped, (1, 1))


def _weight_grad(x: np.ndarray, gy: np.ndarray, stride, w_shape) -> np.ndarray:
    _, _, kh, kw = w_shape
    win = _windows(x, kh, kw, stride)
    out = np.tensordot(win, gy, axes=([0, 2, 3], [0, 2, 3]))  # C, kh, kw, O
    return np.ascontiguousarray(out.transpose(3, 0, 1, 2))


def _check(x: Tensor, w: Tensor, stride, op: str):
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"{op}: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"{op}: input channels {x.shape} do not match kernel {w.shape}")
    if x.shape[2] < w.shape[2] or x.shape[3] < w.shape[3]:
        raise ValueError(f"{op}: kernel {w.shape} larger than input {x.shape}")


def conv2d(x, w, stride=(1, 1)) -> Tensor:
    """y[n,o,i,j] = sum_{c,p,q} x[n,c,i*s0+p,j*s1+q] * w[o,c,p,q]."""
    x, w = as_tensor(x), as_tensor(w)
    stride = tuple(stride)
    _check(x, w, stride, "conv2d")

    def bw(g):
        gx = conv2d_input_grad(g, w, stride, x.shape) if x.requires_grad else None
        gw = conv2d_weight_grad(x, g, stride, w.shape) if w.requires_grad else None
        return gx, gw

    return _make(_fwd(x.data, w.data, stride), (x, w), bw, "conv2d")


def conv2d_input_grad(gy, w, stride, x_shape) -> Tensor:
    """Adjoint of :func:`conv2d` in its input (a transposed convolution)."""
    gy, w = as_tensor(gy), as_tensor(w)
    stride = tuple(stride)
    x_shape = tuple(x_shape)
    if gy.shape[1] != w.shape[0]:
        raise ValueError(f"conv2d_input_grad: channels {gy.shape} do not match kernel {w.shape}")

    def bw(g):
        ggy = conv2d(g, w, stride) if gy.requires_grad else None
        gw = conv2d_weight_grad(g, gy, stride, w.shape) if w.requires_grad else None
        return ggy, gw

    return _make(_input_grad(gy.data, w.data, stride, x_shape), (gy, w), bw, "conv2d_input_grad")


def conv2d_weight_grad(x, gy, stride, w_shape) -> Tensor:
    """Adjoint of :func:`conv2d` in its kernel."""
    x, gy = as_tensor(x), as_tensor(gy)
    stride = tuple(stride)
    w_shape = tuple(w_shape)

    def bw(g):
        gx = conv2d_input_grad(gy, g, stride, x.shape) if x.requires_grad else None
        ggy = conv2d(x, g, stride) if gy.requires_grad else None
        return gx, ggy

    return _make(_weight_grad(x.data, gy.data, stride, w_shape), (x, gy), bw, "conv2d_weight_grad")
