"""Conventional and dilated 2-D convolution.

This is the reference the ACU must reproduce when its synapses sit on integer
positions, and it also backs the fixed 1x1/3x3 layers of the networks.  Kernel
taps are centred: a ``kh x kw`` kernel reads offsets ``-(kh-1)/2 .. (kh-1)/2``
(times the dilation) around each output's centre.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, as_tensor


@dataclass
class ConvParams:
    weights: np.ndarray  # (out_ch, in_ch, kh, kw)
    bias: np.ndarray  # (out_ch,)
    stride: int = 1
    pad: int = 0
    dilation: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weights.ndim != 4:
            raise ShapeError(f"conv weights must be 4-D, got {self.weights.shape}")
        kh, kw = self.weights.shape[2:]
        if kh % 2 == 0 or kw % 2 == 0:
            raise ShapeError(f"kernel dims must be odd, got {kh}x{kw}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} outputs")
        if self.stride < 1 or self.dilation < 1 or self.pad < 0:
            raise ValueError("stride and dilation must be >= 1 and pad >= 0")


def output_size(size, k, stride, pad, dilation=1):
    eff = dilation * (k - 1) + 1
    return (size + 2 * pad - eff) // stride + 1


def _im2col(x, kh, kw, stride, pad, dilation):
    N, C, H, W = x.shape
    OH = output_size(H, kh, stride, pad, dilation)
    OW = output_size(W, kw, stride, pad, dilation)
    if OH < 1 or OW < 1:
        raise ShapeError(f"input {H}x{W} too small for kernel {kh}x{kw} (pad={pad}, dilation={dilation})")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = np.empty((N, C, kh * kw, OH, OW))
    for i in range(kh):
        for j in range(kw):
            r, c = i * dilation, j * dilation
            cols[:, :, i * kw + j] = xp[:, :, r:r + stride * (OH - 1) + 1:stride, c:c + stride * (OW - 1) + 1:stride]
    return cols, OH, OW


def conv2d_forward(x, p):
    """Return ``(y, cache)``; the cache feeds :func:`conv2d_backward`."""
    x = as_tensor(x, "conv input")
    D, Cw, kh, kw = p.weights.shape
    if x.shape[1] != Cw:
        raise ShapeError(f"input has {x.shape[1]} channels, weights expect {Cw}")
    N = x.shape[0]
    cols, OH, OW = _im2col(x, kh, kw, p.stride, p.pad, p.dilation)
    y = np.matmul(p.weights.reshape(D, -1), cols.reshape(N, Cw * kh * kw, OH * OW))
    y = y.reshape(N, D, OH, OW) + p.bias[None, :, None, None]
    return y, (x.shape, cols)


def conv2d(x, p):
    return conv2d_forward(x, p)[0]


def conv2d_backward(dy, cache, p):
    """Gradients ``(d_input, d_weights, d_bias)`` of a convolution."""
    x_shape, cols = cache
    N, C, H, W = x_shape
    D, _, kh, kw = p.weights.shape
    OH, OW = dy.shape[2:]
    if dy.shape != (N, D, OH, OW) or cols.shape[3:] != (OH, OW):
        raise ShapeError(f"upstream gradient shape {dy.shape} does not match forward output")
    dy2 = dy.reshape(N, D, OH * OW)
    cols2 = cols.reshape(N, C * kh * kw, OH * OW)
    d_weights = np.einsum("ndp,nkp->dk", dy2, cols2).reshape(p.weights.shape)
    d_bias = dy.sum(axis=(0, 2, 3))
    dcols = np.matmul(p.weights.reshape(D, -1).T, dy2).reshape(N, C, kh * kw, OH, OW)
    s, d, pad = p.stride, p.dilation, p.pad
    dxp = np.zeros((N, C, H + 2 * pad, W + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            r, c = i * d, j * d
            dxp[:, :, r:r + s * (OH - 1) + 1:s, c:c + s * (OW - 1) + 1:s] += dcols[:, :, i * kw + j]
    d_input = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
    return np.ascontiguousarray(d_input), d_weights, d_bias


def lattice_positions(kh, kw, dilation=1):
    """Centred integer grid of a ``kh x kw`` kernel as ``(K, 2)`` (alpha, beta) pairs.

    The origin comes first; the other taps follow in row-major grid order.
    """
    if kh % 2 == 0 or kw % 2 == 0 or kh < 1 or kw < 1:
        raise ValueError(f"kernel dims must be positive and odd, got {kh}x{kw}")
    rh, rw = (kh - 1) // 2, (kw - 1) // 2
    grid = [(i * dilation, j * dilation) for i in range(-rh, rh + 1) for j in range(-rw, rw + 1)]
    grid.remove((0, 0))
    return np.array([(0, 0)] + grid, dtype=np.float64)


def embed_positions(weights, points, kh, kw):
    """Scatter ``(D, C, K)`` synapse weights into a dense centred ``kh x kw`` kernel.

    ``points`` must be integers inside the kernel; coincident synapses add up.
    """
    weights = np.asarray(weights, dtype=np.float64)
    points = np.asarray(points)
    D, C, K = weights.shape
    kernel = np.zeros((D, C, kh, kw))
    rh, rw = (kh - 1) // 2, (kw - 1) // 2
    for k, (a, b) in enumerate(points):
        if a != int(a) or b != int(b):
            raise ValueError(f"position {k} = ({a}, {b}) is not on the lattice")
        i, j = int(a) + rh, int(b) + rw
        if not (0 <= i < kh and 0 <= j < kw):
            raise ValueError(f"position {k} = ({a}, {b}) falls outside a {kh}x{kw} kernel")
        kernel[:, :, i, j] += weights[:, :, k]
    return kernel
