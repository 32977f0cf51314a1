"""Bilinear sampling of a feature map at fractional offsets.

Axis convention used throughout the package: ``alpha`` displaces along the
height axis and ``beta`` along the width axis.  Lattice points that fall
outside the feature map read as zero.

Corner naming follows the row/column of the floor cell::

    q11 = x[m1, n1]   q12 = x[m1, n2]
    q21 = x[m2, n1]   q22 = x[m2, n2]

with ``m1 = m + floor(alpha)``, ``m2 = m1 + 1`` and likewise for columns.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import NonFiniteError


@dataclass(frozen=True)
class CornerSample:
    q11: float
    q12: float
    q21: float
    q22: float
    d_alpha: float
    d_beta: float

    def __post_init__(self):
        if not (0.0 <= self.d_alpha < 1.0 and 0.0 <= self.d_beta < 1.0):
            raise ValueError(f"fractional parts out of [0, 1): {self.d_alpha}, {self.d_beta}")


def fractional_parts(alpha, beta):
    """Split ``(alpha, beta)`` into fractional parts and floors (toward -inf)."""
    if not (math.isfinite(alpha) and math.isfinite(beta)):
        raise NonFiniteError(f"non-finite position ({alpha}, {beta})")
    fa = math.floor(alpha)
    fb = math.floor(beta)
    da = alpha - fa
    db = beta - fb
    # alpha = -1e-17 gives floor -1 and da == 1.0 after rounding
    if da >= 1.0:
        fa, da = fa + 1, 0.0
    if db >= 1.0:
        fb, db = fb + 1, 0.0
    return da, db, fa, fb


def _read(x, n, c, h, w):
    H, W = x.shape[2], x.shape[3]
    if 0 <= h < H and 0 <= w < W:
        return float(x[n, c, h, w])
    return 0.0


def gather_corners(x, n, c, m, nn, alpha, beta):
    """Corner values around ``(m + alpha, nn + beta)`` in channel ``c`` of image ``n``."""
    da, db, fa, fb = fractional_parts(alpha, beta)
    m1, n1 = m + fa, nn + fb
    return CornerSample(
        q11=_read(x, n, c, m1, n1),
        q12=_read(x, n, c, m1, n1 + 1),
        q21=_read(x, n, c, m1 + 1, n1),
        q22=_read(x, n, c, m1 + 1, n1 + 1),
        d_alpha=da,
        d_beta=db,
    )


def corner_weights(d_alpha, d_beta):
    """Weights of (q11, q12, q21, q22); they sum to one."""
    return (
        (1.0 - d_alpha) * (1.0 - d_beta),
        (1.0 - d_alpha) * d_beta,
        d_alpha * (1.0 - d_beta),
        d_alpha * d_beta,
    )


def bilerp(s):
    da, db = s.d_alpha, s.d_beta
    return (
        s.q11 * (1.0 - da) * (1.0 - db)
        + s.q21 * da * (1.0 - db)
        + s.q12 * (1.0 - da) * db
        + s.q22 * da * db
    )


def bilerp_position_partials(s):
    """Derivatives of :func:`bilerp` with respect to alpha and beta.

    Inside a cell these are exact.  On a lattice line the floor cell is used,
    i.e. the result is the one-sided derivative toward the positive side.
    """
    da, db = s.d_alpha, s.d_beta
    d_dalpha = (1.0 - db) * (s.q21 - s.q11) + db * (s.q22 - s.q12)
    d_dbeta = (1.0 - da) * (s.q12 - s.q11) + da * (s.q22 - s.q21)
    return d_dalpha, d_dbeta


def sample(x, n, c, h, w):
    """Value of channel ``c`` of image ``n`` at fractional coordinate ``(h, w)``."""
    return bilerp(gather_corners(x, n, c, 0, 0, h, w))


def split_positions(points):
    """Vectorised :func:`fractional_parts` for a ``(K, 2)`` position array."""
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise NonFiniteError("non-finite synapse position")
    floors = np.floor(points)
    frac = points - floors
    wrap = frac >= 1.0
    floors[wrap] += 1.0
    frac[wrap] = 0.0
    return frac[:, 0].copy(), frac[:, 1].copy(), floors[:, 0].astype(np.int64), floors[:, 1].astype(np.int64)
