"""Active convolution unit: a convolution with learnable, continuous tap positions.

Each output is ``sum_c sum_k w[d, c, k] * x_c(base + p_k) + b[d]`` where the
sample at ``base + p_k`` is bilinearly interpolated.  The ``K`` positions are
shared by every output unit of the layer (per channel group).

The spatial output size is fixed when the layer is built: it is derived from
the lattice bounding box of the initial positions, exactly as a conventional
kernel of that extent would do.  Positions may drift afterwards without
changing shapes; samples that land off the map read zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .interp import split_positions
from .refconv import lattice_positions
from .tensor import ShapeError, as_tensor

ZERO_GRAD_EPS = 1e-12


@dataclass
class SynapsePositions:
    points: np.ndarray  # (K, 2) rows of (alpha, beta), in pixels
    origin_fixed: bool = True

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError(f"positions must be a non-empty (K, 2) array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("positions must be finite")
        if self.origin_fixed and not np.all(pts[0] == 0.0):
            raise ValueError(f"first synapse must sit at the origin when it is fixed, got {tuple(pts[0])}")
        self.points = pts

    @property
    def K(self):
        return self.points.shape[0]

    @property
    def n_learnable(self):
        return 2 * (self.K - 1) if self.origin_fixed else 2 * self.K


def init_positions(kind="grid3x3", arg=None, origin_fixed=True):
    """Initial synapse layout.

    ``kind`` is ``"grid3x3"``, ``"dilated"`` (``arg`` = dilation factor) or
    ``"custom"`` (``arg`` = sequence of ``(alpha, beta)`` pairs).
    """
    if kind == "grid3x3":
        pts = lattice_positions(3, 3, 1)
    elif kind == "dilated":
        pts = lattice_positions(3, 3, int(arg if arg is not None else 2))
    elif kind == "custom":
        if arg is None:
            raise ValueError("custom positions need a list of (alpha, beta) pairs")
        pts = arg
    else:
        raise ValueError(f"unknown position init kind {kind!r}")
    return SynapsePositions(pts, origin_fixed=origin_fixed)


def _span(position_sets):
    pts = np.concatenate([p.points for p in position_sets])
    lo = np.floor(pts.min(axis=0)).astype(int)
    hi = np.ceil(pts.max(axis=0)).astype(int)
    return int(lo[0]), int(hi[0]), int(lo[1]), int(hi[1])


class AcuLayer:
    """Weights ``(out_ch, in_ch // groups, K)``, bias ``(out_ch,)`` and one position set per group."""

    def __init__(self, weights, bias, positions, stride=1, pad=None, position_lr_scale=0.01, clamp_radius=math.inf):
        if isinstance(positions, SynapsePositions):
            positions = [positions]
        self.group_positions = list(positions)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        G = len(self.group_positions)
        D, _, K = self.weights.shape
        if any(p.K != K for p in self.group_positions):
            raise ShapeError(f"weights carry K={K} synapses but positions have {[p.K for p in self.group_positions]}")
        if D % G:
            raise ShapeError(f"{D} output channels do not split into {G} groups")
        if self.bias.shape != (D,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {D} outputs")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if position_lr_scale < 0:
            raise ValueError("position_lr_scale must be >= 0")
        self.stride = int(stride)
        self.span = _span(self.group_positions)
        lo_a, hi_a, lo_b, hi_b = self.span
        self.pad = int(max(-lo_a, hi_a, -lo_b, hi_b, 0) if pad is None else pad)
        self.position_lr_scale = float(position_lr_scale)
        self.clamp_radius = float(clamp_radius)

    @classmethod
    def create(cls, in_ch, out_ch, positions=None, stride=1, pad=None, groups=1, rng=None,
               input_size=None, position_lr_scale=0.01, clamp_radius=None):
        """He-initialised layer; ``input_size`` (H, W) sets the default clamp radius."""
        rng = np.random.default_rng() if rng is None else rng
        if positions is None:
            positions = init_positions("grid3x3")
        if isinstance(positions, SynapsePositions):
            positions = [SynapsePositions(positions.points.copy(), positions.origin_fixed) for _ in range(groups)]
        if len(positions) != groups:
            raise ValueError(f"need {groups} position sets, got {len(positions)}")
        if in_ch % groups:
            raise ShapeError(f"{in_ch} input channels do not split into {groups} groups")
        K = positions[0].K
        fan_in = (in_ch // groups) * K
        weights = rng.standard_normal((out_ch, in_ch // groups, K)) * math.sqrt(2.0 / fan_in)
        if clamp_radius is None:
            clamp_radius = (min(input_size) - 1) if input_size is not None else math.inf
        return cls(weights, np.zeros(out_ch), positions, stride=stride, pad=pad,
                   position_lr_scale=position_lr_scale, clamp_radius=clamp_radius)

    @property
    def groups(self):
        return len(self.group_positions)

    @property
    def positions(self):
        return self.group_positions[0]

    @property
    def K(self):
        return self.weights.shape[2]

    @property
    def in_channels(self):
        return self.weights.shape[1] * self.groups

    @property
    def out_channels(self):
        return self.weights.shape[0]

    def output_shape(self, H, W):
        lo_a, hi_a, lo_b, hi_b = self.span
        OH = (H + 2 * self.pad - (hi_a - lo_a + 1)) // self.stride + 1
        OW = (W + 2 * self.pad - (hi_b - lo_b + 1)) // self.stride + 1
        return OH, OW

    def num_params(self):
        return self.weights.size + self.bias.size + sum(p.n_learnable for p in self.group_positions)


@dataclass
class AcuGradients:
    d_weights: np.ndarray
    d_bias: np.ndarray
    d_positions: np.ndarray  # (K, 2), or (G, K, 2) for grouped layers
    d_input: np.ndarray


@dataclass
class _GroupCache:
    xp: np.ndarray
    fa: np.ndarray
    fb: np.ndarray
    da: np.ndarray
    db: np.ndarray
    r_off: int
    c_off: int
    cols: np.ndarray
    margin: tuple  # (top, left) zero rows/columns added before the input
    padded: bool = True  # False: xp is the raw input, every corner not yet readable


@dataclass
class AcuCache:
    x_shape: tuple
    out_shape: tuple
    backend: str | None
    groups: list = field(default_factory=list)


def _margins(layer, fa, fb, next_row, next_col, OH, OW, H, W):
    """Zero rows/columns needed around the map so every read stays in range.

    Output ``oh`` reads rows ``oh * stride - pad - lo_a + fa[k]`` and, where
    ``next_row[k]``, the row below.
    """
    lo_a, _, lo_b, _ = layer.span
    s = layer.stride
    top = max(0, layer.pad + lo_a - int(fa.min()))
    bottom = max(0, s * (OH - 1) - layer.pad - lo_a + int((fa + next_row).max()) + 1 - H)
    left = max(0, layer.pad + lo_b - int(fb.min()))
    right = max(0, s * (OW - 1) - layer.pad - lo_b + int((fb + next_col).max()) + 1 - W)
    return top, bottom, left, right


def _pad_for(xg, layer, fa, fb, OH, OW):
    """Pad ``xg`` so that all four bilinear corners of every tap can be read."""
    H, W = xg.shape[2:]
    one = np.ones_like(fa)
    top, bottom, left, right = _margins(layer, fa, fb, one, one, OH, OW, H, W)
    return np.pad(xg, ((0, 0), (0, 0), (top, bottom), (left, right))), (top, left)


def acu_forward(x, layer, backend=None):
    """Return ``(y, cache)`` for input ``x`` of shape ``(N, C, H, W)``."""
    x = as_tensor(x, "ACU input")
    N, C, H, W = x.shape
    if C != layer.in_channels:
        raise ShapeError(f"input has {C} channels, layer expects {layer.in_channels}")
    OH, OW = layer.output_shape(H, W)
    if OH < 1 or OW < 1:
        raise ShapeError(f"input {H}x{W} too small for layer extent {layer.span} with pad {layer.pad}")
    sample, _ = _kernels.get(backend)
    G = layer.groups
    Cg = C // G
    D = layer.out_channels
    Dg = D // G
    lo_a, hi_a, lo_b, hi_b = layer.span
    y = np.empty((N, D, OH, OW)) if G > 1 else None
    cache = AcuCache(x.shape, (N, D, OH, OW), backend)
    for g, pos in enumerate(layer.group_positions):
        da, db, fa, fb = split_positions(pos.points)
        xg = x if G == 1 else x[:, g * Cg:(g + 1) * Cg]
        if any(_margins(layer, fa, fb, da > 0, db > 0, OH, OW, H, W)):
            xp, (top, left) = _pad_for(xg, layer, fa, fb, OH, OW)
            padded = True
        else:
            # every tap lands inside the map: sample x directly, pad later for backward
            xp, top, left, padded = xg, 0, 0, False
        r_off = top - layer.pad - lo_a
        c_off = left - layer.pad - lo_b
        cols = sample(xp, fa, fb, da, db, r_off, c_off, layer.stride, OH, OW)
        wg = layer.weights[g * Dg:(g + 1) * Dg].reshape(Dg, Cg * layer.K)
        yg = np.matmul(wg, cols.reshape(N, Cg * layer.K, OH * OW)).reshape(N, Dg, OH, OW)
        if G == 1:
            y = yg
        else:
            y[:, g * Dg:(g + 1) * Dg] = yg
        cache.groups.append(_GroupCache(xp, fa, fb, da, db, r_off, c_off, cols, (top, left), padded))
    y += layer.bias[None, :, None, None]
    return y, cache


def acu_backward(dy, cache, layer):
    """Analytic gradients of all ACU parameters and of the input."""
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape != cache.out_shape:
        raise ShapeError(f"upstream gradient shape {dy.shape} != forward output {cache.out_shape}")
    if len(cache.groups) != layer.groups:
        raise ShapeError("cache was produced by a layer with a different group count")
    _, scatter = _kernels.get(cache.backend)
    N, C, H, W = cache.x_shape
    _, D, OH, OW = dy.shape
    G, K = layer.groups, layer.K
    Cg, Dg = C // G, D // G
    d_weights = np.empty_like(layer.weights)
    d_positions = np.zeros((G, K, 2))
    d_input = np.empty(cache.x_shape)
    for g, gc in enumerate(cache.groups):
        dyg = dy[:, g * Dg:(g + 1) * Dg].reshape(N, Dg, OH * OW)
        cols = gc.cols.reshape(N, Cg * K, OH * OW)
        d_weights[g * Dg:(g + 1) * Dg] = np.einsum("ndp,nkp->dk", dyg, cols).reshape(Dg, Cg, K)
        wg = layer.weights[g * Dg:(g + 1) * Dg].reshape(Dg, Cg * K)
        dcols = np.matmul(wg.T, dyg).reshape(N, Cg, K, OH, OW)
        xp, r_off, c_off, (top, left) = gc.xp, gc.r_off, gc.c_off, gc.margin
        if not gc.padded:
            xp, (top, left) = _pad_for(xp, layer, gc.fa, gc.fb, OH, OW)
            r_off += top
            c_off += left
        g_alpha, g_beta, dxp = scatter(xp, gc.fa, gc.fb, gc.da, gc.db, r_off, c_off, layer.stride, dcols)
        d_positions[g, :, 0] = g_alpha
        d_positions[g, :, 1] = g_beta
        if layer.group_positions[g].origin_fixed:
            d_positions[g, 0] = 0.0
        d_input[:, g * Cg:(g + 1) * Cg] = dxp[:, :, top:top + H, left:left + W]
    d_bias = dy.sum(axis=(0, 2, 3))
    if G == 1:
        d_positions = d_positions[0]
    return AcuGradients(d_weights, d_bias, d_positions, d_input)


def normalize_position_gradient(g, origin_fixed=True, eps=ZERO_GRAD_EPS):
    """Scale each synapse's ``(d_alpha, d_beta)`` pair to unit length.

    Pairs with norm below ``eps`` become zero, as does synapse 0 when the
    origin is fixed.  Works on ``(K, 2)`` or stacked ``(G, K, 2)`` input.
    """
    g = np.asarray(g, dtype=np.float64)
    z = np.sqrt(g[..., 0] ** 2 + g[..., 1] ** 2)
    out = np.zeros_like(g)
    ok = z >= eps
    out[ok] = g[ok] / z[ok][:, None]
    if origin_fixed:
        out[..., 0, :] = 0.0
    return out


def apply_position_update(layer, normalized_g, base_lr, warmed_up):
    """Move synapses by ``base_lr * position_lr_scale`` along ``-normalized_g``.

    Nothing moves before warm-up ends.  Coordinates are clamped to
    ``[-clamp_radius, clamp_radius]`` and a fixed origin never moves.
    Positions are updated in place; the list of point arrays is returned.
    """
    g = np.asarray(normalized_g, dtype=np.float64)
    if g.ndim == 2:
        g = g[None]
    if g.shape != (layer.groups, layer.K, 2):
        raise ShapeError(f"position gradient shape {g.shape} does not match layer ({layer.groups}, {layer.K}, 2)")
    if warmed_up:
        step = base_lr * layer.position_lr_scale
        r = layer.clamp_radius
        for pos, gg in zip(layer.group_positions, g):
            pts = pos.points
            pts -= step * gg
            np.clip(pts, -r, r, out=pts)
            if pos.origin_fixed:
                pts[0] = 0.0
    return [p.points for p in layer.group_positions]
