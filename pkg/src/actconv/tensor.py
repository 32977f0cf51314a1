"""Dense NCHW tensors.

A tensor here is a C-contiguous ``float64`` numpy array with exactly four
axes ordered (batch, channel, height, width).  Helpers in this module create,
validate and index such arrays; everything else in the package consumes them
directly.
"""
from __future__ import annotations

import numpy as np

DTYPE = np.float64
_MAX_ELEMENTS = 2**40


class ShapeError(ValueError):
    """Raised when array shapes are inconsistent with an operation."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN or Inf shows up in a computed value."""


def tensor_new(shape, fill=0.0):
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4:
        raise ShapeError(f"expected 4 dims (N, C, H, W), got {shape}")
    if any(s < 0 for s in shape):
        raise ShapeError(f"negative dimension in {shape}")
    count = 1
    for s in shape:
        count *= s
    if count > _MAX_ELEMENTS:
        raise OverflowError(f"tensor of shape {shape} has {count} elements")
    return np.full(shape, fill, dtype=DTYPE)


def as_tensor(x, name="tensor"):
    """Return ``x`` as a contiguous float64 4-D array (copying only if needed)."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim != 4:
        raise ShapeError(f"{name} must be 4-D (N, C, H, W), got shape {arr.shape}")
    return arr


def _offset(shape, n, c, h, w):
    N, C, H, W = shape
    for i, (v, lim) in enumerate(zip((n, c, h, w), shape)):
        if not 0 <= v < lim:
            raise IndexError(f"index {(n, c, h, w)} out of range for shape {shape} (axis {i})")
    return ((n * C + c) * H + h) * W + w


def tensor_index(t, n, c, h, w):
    """Read one element via its row-major offset ``((n*C + c)*H + h)*W + w``."""
    return float(t.reshape(-1)[_offset(t.shape, n, c, h, w)])


def tensor_set(t, n, c, h, w, value):
    t.reshape(-1)[_offset(t.shape, n, c, h, w)] = value


def check_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite entries in {what}")
    return x
