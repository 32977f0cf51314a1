"""Finite-difference gradient checking.

The numeric side only ever calls forward passes; it shares nothing with the
analytic backward code it is checking.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import NonFiniteError

DEFAULT_H = 1e-5
LATTICE_MARGIN = 10  # in units of h


def rel_err(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def _eval(f, theta):
    v = float(f(theta))
    if not math.isfinite(v):
        raise NonFiniteError(f"objective returned {v}")
    return v


def central_diff(f, theta, coord, h=DEFAULT_H):
    """``(f(theta + h e) - f(theta - h e)) / 2h`` for the unit vector ``e`` at ``coord``.

    ``theta`` is perturbed in place and restored before returning.
    """
    old = theta[coord]
    try:
        theta[coord] = old + h
        fp = _eval(f, theta)
        theta[coord] = old - h
        fm = _eval(f, theta)
    finally:
        theta[coord] = old
    return (fp - fm) / (2.0 * h)


def forward_diff(f, theta, coord, h=DEFAULT_H):
    """Second-order one-sided difference toward +e: ``(-3 f0 + 4 f1 - f2) / 2h``."""
    old = theta[coord]
    try:
        f0 = _eval(f, theta)
        theta[coord] = old + h
        f1 = _eval(f, theta)
        theta[coord] = old + 2.0 * h
        f2 = _eval(f, theta)
    finally:
        theta[coord] = old
    return (4.0 * (f1 - f0) - (f2 - f0)) / (2.0 * h)


@dataclass
class GradReport:
    name: str = "check"
    max_rel_err: float = 0.0
    worst_coordinate: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0
    tol: float = 1e-5
    n_checked: int = 0

    @property
    def passed(self):
        return self.n_checked > 0 and self.max_rel_err < self.tol

    def merge(self, other):
        self.n_checked += other.n_checked
        if other.max_rel_err > self.max_rel_err or not self.worst_coordinate:
            self.max_rel_err = other.max_rel_err
            self.worst_coordinate = other.worst_coordinate
            self.analytic = other.analytic
            self.numeric = other.numeric
        return self

    def line(self):
        block, idx = self.worst_coordinate if self.worst_coordinate else ("-", ())
        where = f"{block}[{','.join(str(i) for i in idx)}]"
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name:<10s} {status} max_rel_err={self.max_rel_err:.3e} tol={self.tol:.0e} "
                f"n={self.n_checked:<6d} worst={where} analytic={self.analytic:+.9e} numeric={self.numeric:+.9e}")

    __str__ = line


@dataclass
class GradCase:
    """One checkable instance.

    ``loss`` is evaluated with no arguments and must read ``params`` (which
    the checker perturbs in place).  ``grads`` holds the analytic gradients
    under the same keys.  ``coords`` optionally restricts which indices of a
    block are checked; ``position_blocks`` names blocks whose coordinates are
    synapse positions and so are non-smooth on the integer lattice.
    """
    params: dict
    loss: Callable[[], float]
    grads: dict
    coords: dict = field(default_factory=dict)
    position_blocks: frozenset = frozenset()


def _near_lattice(v, margin):
    frac = v - math.floor(v)
    return min(frac, 1.0 - frac) < margin


def check_case(case, h=DEFAULT_H, tol=1e-5, one_sided=False, name="check"):
    report = GradReport(name=name, tol=tol)
    for block, theta in case.params.items():
        analytic = case.grads[block]
        coords = case.coords.get(block)
        if coords is None:
            coords = list(np.ndindex(theta.shape))
        is_pos = block in case.position_blocks
        for coord in coords:
            coord = tuple(int(c) for c in coord)
            diff = central_diff
            if is_pos and _near_lattice(theta[coord], LATTICE_MARGIN * h):
                if not one_sided:
                    continue
                if theta[coord] != math.floor(theta[coord]):
                    continue  # near but not on the lattice: neither rule applies
                diff = forward_diff
            num = diff(lambda _: case.loss(), theta, coord, h)
            a = float(analytic[coord])
            e = rel_err(a, num)
            report.n_checked += 1
            if e > report.max_rel_err or not report.worst_coordinate:
                report.max_rel_err = e
                report.worst_coordinate = (block, coord)
                report.analytic = a
                report.numeric = num
    return report


def check_layer(make_case, seeds=range(5), h=DEFAULT_H, tol=1e-5, one_sided=False, name="layer"):
    """Check ``make_case(rng)`` over several seeds and report the worst coordinate.

    A breach of ``tol`` yields a failing report; it does not raise.
    """
    report = GradReport(name=name, tol=tol)
    for seed in seeds:
        case = make_case(np.random.default_rng(seed))
        report.merge(check_case(case, h=h, tol=tol, one_sided=one_sided, name=name))
    return report


# ---------------------------------------------------------------- built-in cases

def _sq_loss(y):
    return float(np.sum(y * y))


def _off_lattice(rng, shape, low, high, margin=0.05):
    v = rng.uniform(low, high, size=shape)
    frac = v - np.floor(v)
    bad = (frac < margin) | (frac > 1 - margin)
    v[bad] += 0.5
    return v


def interp_case(rng):
    """Bilinear sample of a random map w.r.t. the sample coordinate and the map."""
    from .interp import bilerp, bilerp_position_partials, gather_corners

    x = rng.standard_normal((1, 1, 5, 5))
    pos = _off_lattice(rng, 2, 0.0, 3.0)
    params = {"x": x, "pos": pos}

    def loss():
        return bilerp(gather_corners(x, 0, 0, 0, 0, pos[0], pos[1]))

    s = gather_corners(x, 0, 0, 0, 0, pos[0], pos[1])
    ga, gb = bilerp_position_partials(s)
    gx = np.zeros_like(x)
    fa, fb = math.floor(pos[0]), math.floor(pos[1])
    da, db = s.d_alpha, s.d_beta
    for (i, j, w) in ((0, 0, (1 - da) * (1 - db)), (0, 1, (1 - da) * db), (1, 0, da * (1 - db)), (1, 1, da * db)):
        if 0 <= fa + i < 5 and 0 <= fb + j < 5:
            gx[0, 0, fa + i, fb + j] += w
    return GradCase(params, loss, {"x": gx, "pos": np.array([ga, gb])}, position_blocks=frozenset({"pos"}))


def conv_case(rng, N=2, C=2, D=3, H=6, W=5, k=3, stride=1, dilation=1):
    from .refconv import ConvParams, conv2d, conv2d_backward, conv2d_forward

    pad = (k - 1) // 2 * dilation
    x = rng.standard_normal((N, C, H, W))
    p = ConvParams(rng.standard_normal((D, C, k, k)), rng.standard_normal(D), stride, pad, dilation)
    y, cache = conv2d_forward(x, p)
    r = rng.standard_normal(y.shape)
    dx, dw, db = conv2d_backward(r, cache, p)
    params = {"input": x, "weights": p.weights, "bias": p.bias}
    return GradCase(params, lambda: float(np.sum(r * conv2d(x, p))), {"input": dx, "weights": dw, "bias": db})


def acu_case(rng, N=None, C=None, D=None, K=None, H=None, W=None, stride=None, lattice=False,
             origin_fixed=None, backend=None):
    """Random small ACU instance under the loss ``sum(y**2)``.

    Unspecified sizes are drawn at random (N<=2, C<=3, D<=2, K in {1,5,9},
    H, W <= 8).  With ``lattice=True`` all positions are integers.
    """
    from .acu import AcuLayer, SynapsePositions, acu_backward, acu_forward

    N = N or int(rng.integers(1, 3))
    C = C or int(rng.integers(1, 4))
    D = D or int(rng.integers(1, 3))
    K = K or int(rng.choice([1, 5, 9]))
    H = H or int(rng.integers(4, 9))
    W = W or int(rng.integers(4, 9))
    stride = stride or int(rng.choice([1, 1, 2]))
    if origin_fixed is None:
        origin_fixed = bool(rng.integers(0, 2))
    if lattice:
        pts = rng.integers(-2, 3, size=(K, 2)).astype(np.float64)
    else:
        pts = _off_lattice(rng, (K, 2), -2.0, 2.0)
    if origin_fixed:
        pts[0] = 0.0
    layer = AcuLayer(rng.standard_normal((D, C, K)), rng.standard_normal(D),
                     SynapsePositions(pts, origin_fixed), stride=stride, pad=1)
    x = rng.standard_normal((N, C, H, W))
    points = layer.positions.points
    y, cache = acu_forward(x, layer, backend=backend)
    g = acu_backward(2.0 * y, cache, layer)
    params = {"input": x, "weights": layer.weights, "bias": layer.bias, "positions": points}
    grads = {"input": g.d_input, "weights": g.d_weights, "bias": g.d_bias, "positions": g.d_positions}
    coords = {}
    if origin_fixed:
        coords["positions"] = [(k, a) for k in range(1, K) for a in range(2)]
    return GradCase(params, lambda: _sq_loss(acu_forward(x, layer, backend=backend)[0]), grads, coords,
                    position_blocks=frozenset({"positions"}))


def network_case(rng, width=0.25, classes=10, n=2, size=8, n_coords=25):
    """Whole plain ACU network (with batch norm in training mode) on a tiny batch."""
    from .nn import Network, build_plain_network

    spec = build_plain_network(width, classes, use_acu=True)
    net = Network(spec, (3, size, size), rng)
    for name in net.position_keys():
        pts = net.params[name]
        pts[1:] = pts[1:] + _off_lattice(rng, pts[1:].shape, -0.4, 0.4, margin=0.1)
    x = rng.standard_normal((n, 3, size, size))
    labels = rng.integers(0, classes, size=n)
    _, grads, dx = net.forward_backward(x, labels, return_input_grad=True)
    params = dict(net.params)
    params["input"] = x
    grads = dict(grads)
    grads["input"] = dx
    learnable = [(k, idx) for k, v in params.items() for idx in np.ndindex(v.shape)
                 if not (k in net.position_keys() and idx[0] == 0)]
    pick = rng.choice(len(learnable), size=min(n_coords, len(learnable)), replace=False)
    coords = {}
    for i in pick:
        k, idx = learnable[i]
        coords.setdefault(k, []).append(idx)
    params = {k: params[k] for k in coords}
    grads = {k: grads[k] for k in coords}

    def loss():
        return net.forward_backward(x, labels, backward=False)[0]

    return GradCase(params, loss, grads, coords, position_blocks=frozenset(net.position_keys()))


def run_suite(module, seeds=None, h=DEFAULT_H):
    """Named suites used by the ``gradcheck`` CLI command.  Returns a list of reports."""
    if module == "interp":
        return [check_layer(interp_case, seeds or range(200), h=h, tol=1e-6, name="interp")]
    if module == "conv":
        return [
            check_layer(conv_case, seeds or range(5), h=h, tol=1e-7, name="conv"),
            check_layer(lambda r: conv_case(r, stride=2, dilation=2, H=9, W=8), seeds or range(3), h=h,
                        tol=1e-7, name="conv-s2d2"),
        ]
    if module == "acu":
        return [
            check_layer(acu_case, seeds or range(50), h=h, tol=1e-5, name="acu"),
            check_layer(lambda r: acu_case(r, lattice=True), seeds or range(50), h=h, tol=1e-5,
                        one_sided=True, name="acu-lattice"),
        ]
    if module == "network":
        return [check_layer(network_case, seeds or range(2), h=h, tol=1e-3, name="network")]
    raise ValueError(f"unknown gradcheck module {module!r}")
