"""Bilinear gather/scatter kernels shared by the ACU forward and backward passes.

Every synapse ``k`` has one fractional offset for the whole layer, so sampling
all output positions for that synapse is a weighted sum of four strided
windows of the zero-margined input ``xp``.  Window origin for synapse ``k``
is ``(r_off + fa[k], c_off + fb[k])``; output ``(oh, ow)`` reads row
``r_off + fa[k] + oh * stride`` and the row below it.

Two implementations with identical signatures live here: numba loops and
numpy slicing.  :func:`get` picks one.
"""
from __future__ import annotations

import numpy as np

from . import _backend
from ._backend import njit


# ---------------------------------------------------------------- numpy path

def _window(xp, r0, c0, stride, OH, OW):
    return xp[:, :, r0:r0 + stride * (OH - 1) + 1:stride, c0:c0 + stride * (OW - 1) + 1:stride]


def sample_numpy(xp, fa, fb, da, db, r_off, c_off, stride, OH, OW):
    N, C = xp.shape[:2]
    K = fa.shape[0]
    cols = np.empty((N, C, K, OH, OW), dtype=xp.dtype)
    for k in range(K):
        r0 = r_off + int(fa[k])
        c0 = c_off + int(fb[k])
        a, b = da[k], db[k]
        out = cols[:, :, k]
        if a == 0.0 and b == 0.0:
            out[...] = _window(xp, r0, c0, stride, OH, OW)
            continue
        np.multiply(_window(xp, r0, c0, stride, OH, OW), (1.0 - a) * (1.0 - b), out=out)
        if b != 0.0:
            out += (1.0 - a) * b * _window(xp, r0, c0 + 1, stride, OH, OW)
        if a != 0.0:
            out += a * (1.0 - b) * _window(xp, r0 + 1, c0, stride, OH, OW)
            if b != 0.0:
                out += a * b * _window(xp, r0 + 1, c0 + 1, stride, OH, OW)
    return cols


def scatter_numpy(xp, fa, fb, da, db, r_off, c_off, stride, dcols):
    N, C, K, OH, OW = dcols.shape
    g_alpha = np.zeros(K)
    g_beta = np.zeros(K)
    dxp = np.zeros_like(xp)
    for k in range(K):
        r0 = r_off + int(fa[k])
        c0 = c_off + int(fb[k])
        a, b = da[k], db[k]
        g = dcols[:, :, k]
        q11 = _window(xp, r0, c0, stride, OH, OW)
        q12 = _window(xp, r0, c0 + 1, stride, OH, OW)
        q21 = _window(xp, r0 + 1, c0, stride, OH, OW)
        q22 = _window(xp, r0 + 1, c0 + 1, stride, OH, OW)
        g_alpha[k] = np.sum(g * ((1.0 - b) * (q21 - q11) + b * (q22 - q12)))
        g_beta[k] = np.sum(g * ((1.0 - a) * (q12 - q11) + a * (q22 - q21)))
        _window(dxp, r0, c0, stride, OH, OW)[...] += (1.0 - a) * (1.0 - b) * g
        if b != 0.0:
            _window(dxp, r0, c0 + 1, stride, OH, OW)[...] += (1.0 - a) * b * g
        if a != 0.0:
            _window(dxp, r0 + 1, c0, stride, OH, OW)[...] += a * (1.0 - b) * g
            if b != 0.0:
                _window(dxp, r0 + 1, c0 + 1, stride, OH, OW)[...] += a * b * g
    return g_alpha, g_beta, dxp


# ---------------------------------------------------------------- numba path

@njit
def sample_numba(xp, fa, fb, da, db, r_off, c_off, stride, OH, OW):
    N, C = xp.shape[0], xp.shape[1]
    K = fa.shape[0]
    cols = np.empty((N, C, K, OH, OW), dtype=xp.dtype)
    for n in range(N):
        for c in range(C):
            for k in range(K):
                a = da[k]
                b = db[k]
                w11 = (1.0 - a) * (1.0 - b)
                w12 = (1.0 - a) * b
                w21 = a * (1.0 - b)
                w22 = a * b
                r0 = r_off + fa[k]
                c0 = c_off + fb[k]
                for oh in range(OH):
                    r = r0 + oh * stride
                    for ow in range(OW):
                        q = c0 + ow * stride
                        v = w11 * xp[n, c, r, q]
                        if b != 0.0:
                            v += w12 * xp[n, c, r, q + 1]
                        if a != 0.0:
                            v += w21 * xp[n, c, r + 1, q]
                            if b != 0.0:
                                v += w22 * xp[n, c, r + 1, q + 1]
                        cols[n, c, k, oh, ow] = v
    return cols


@njit
def scatter_numba(xp, fa, fb, da, db, r_off, c_off, stride, dcols):
    N, C, K, OH, OW = dcols.shape
    g_alpha = np.zeros(K)
    g_beta = np.zeros(K)
    dxp = np.zeros_like(xp)
    for n in range(N):
        for c in range(C):
            for k in range(K):
                a = da[k]
                b = db[k]
                w11 = (1.0 - a) * (1.0 - b)
                w12 = (1.0 - a) * b
                w21 = a * (1.0 - b)
                w22 = a * b
                r0 = r_off + fa[k]
                c0 = c_off + fb[k]
                sa = 0.0
                sb = 0.0
                for oh in range(OH):
                    r = r0 + oh * stride
                    for ow in range(OW):
                        g = dcols[n, c, k, oh, ow]
                        if g == 0.0:
                            continue
                        q = c0 + ow * stride
                        q11 = xp[n, c, r, q]
                        q12 = xp[n, c, r, q + 1]
                        q21 = xp[n, c, r + 1, q]
                        q22 = xp[n, c, r + 1, q + 1]
                        sa += g * ((1.0 - b) * (q21 - q11) + b * (q22 - q12))
                        sb += g * ((1.0 - a) * (q12 - q11) + a * (q22 - q21))
                        dxp[n, c, r, q] += w11 * g
                        dxp[n, c, r, q + 1] += w12 * g
                        dxp[n, c, r + 1, q] += w21 * g
                        dxp[n, c, r + 1, q + 1] += w22 * g
                g_alpha[k] += sa
                g_beta[k] += sb
    return g_alpha, g_beta, dxp


_IMPLS = {
    "numpy": (sample_numpy, scatter_numpy),
    "numba": (sample_numba, scatter_numba),
}


def get(backend=None):
    """Return ``(sample, scatter)`` for ``backend`` (default: the active one)."""
    if backend is None:
        backend = _backend.active_backend()
    if backend == "numba" and not _backend.HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    return _IMPLS[backend]
