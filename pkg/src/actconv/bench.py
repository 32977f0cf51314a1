"""Forward-pass timing of the ACU against conventional convolution."""
from __future__ import annotations

import statistics
import time

import numpy as np

from . import _backend
from .acu import AcuLayer, SynapsePositions, acu_forward, init_positions
from .refconv import ConvParams, conv2d

BENCH_HEADER = ("n", "c", "d", "k", "h", "w", "backend", "conv_median_s", "acu_median_s", "ratio")


def parse_shapes(text):
    """Lines of ``N C D H W [K]`` (K defaults to 9); ``#`` starts a comment."""
    shapes = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [int(v) for v in line.replace(",", " ").split()]
        except ValueError:
            raise ValueError(f"line {lineno}: expected integers, got {raw!r}") from None
        if len(vals) == 5:
            vals.append(9)
        if len(vals) != 6 or vals[5] not in (1, 9) or min(vals) < 1:
            raise ValueError(f"line {lineno}: expected 'N C D H W [K]' with K in {{1, 9}}, got {raw!r}")
        shapes.append(tuple(vals))
    return shapes


def _paired_medians(fa, fb, reps):
    # alternate the two calls so load spikes hit both sides alike
    fa()
    fb()
    ta, tb = [], []
    for _ in range(reps):
        for fn, times in ((fa, ta), (fb, tb)):
            t = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t)
    return statistics.median(ta), statistics.median(tb)


def bench_shape(n, c, d, h, w, k=9, reps=30, backend=None, seed=0):
    """Median forward time of conv2d and of an ACU with the same (C, D, K, H, W).

    For K=9 the ACU uses a 3x3 grid displaced by fractional amounts (as after
    training); for K=1 it is a single synapse at the origin.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, c, h, w))
    ks = 3 if k == 9 else 1
    conv = ConvParams(rng.standard_normal((d, c, ks, ks)), np.zeros(d), stride=1, pad=ks // 2)
    if k == 9:
        layer = AcuLayer(rng.standard_normal((d, c, k)), np.zeros(d), init_positions("grid3x3"), pad=1)
        # drift after construction, as in training: output shape stays 3x3-sized
        layer.positions.points[1:] += rng.uniform(-0.4, 0.4, size=(8, 2))
    else:
        layer = AcuLayer(rng.standard_normal((d, c, k)), np.zeros(d), SynapsePositions([[0.0, 0.0]]), pad=0)
    return _paired_medians(lambda: conv2d(x, conv), lambda: acu_forward(x, layer, backend=backend), reps)


def run_bench(shapes, reps=30, backends=None):
    if backends is None:
        backends = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])
    rows = []
    for n, c, d, h, w, k in shapes:
        for be in backends:
            t_conv, t_acu = bench_shape(n, c, d, h, w, k, reps, be)
            rows.append((n, c, d, k, h, w, be, t_conv, t_acu, t_acu / t_conv))
    return rows


def bench_csv(rows):
    lines = [",".join(BENCH_HEADER)]
    for r in rows:
        lines.append(",".join([str(v) for v in r[:7]] + [f"{r[7]:.6e}", f"{r[8]:.6e}", f"{r[9]:.4f}"]))
    return "\n".join(lines) + "\n"
