"""Compare the numba and numpy ACU kernels on forward and backward passes.

    python3 benchmarks/bench_backends.py [--reps 20]

Prints one row per (shape, backend) with median seconds; numba timings
exclude the first (compiling) call.
"""
import argparse
import statistics
import time

import numpy as np

from actconv import _backend
from actconv.acu import AcuLayer, acu_backward, acu_forward, init_positions

SHAPES = [
    # N, C, D, H, W
    (8, 16, 16, 32, 32),
    (16, 32, 32, 16, 16),
    (32, 8, 8, 16, 16),
]


def median_time(fn, reps):
    fn()
    out = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t)
    return statistics.median(out)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--reps", type=int, default=20)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])
    rng = np.random.default_rng(0)
    print(f"{'shape':>22s} {'backend':>7s} {'forward_s':>11s} {'backward_s':>11s}")
    for n, c, d, h, w in SHAPES:
        x = rng.standard_normal((n, c, h, w))
        layer = AcuLayer(rng.standard_normal((d, c, 9)), np.zeros(d), init_positions("grid3x3"), pad=1)
        layer.positions.points[1:] += rng.uniform(-0.4, 0.4, size=(8, 2))
        y, _ = acu_forward(x, layer)
        dy = rng.standard_normal(y.shape)
        ref = None
        for be in backends:
            y, cache = acu_forward(x, layer, backend=be)
            grads = acu_backward(dy, cache, layer)
            if ref is None:
                ref = (y, grads.d_positions)
            else:
                assert np.allclose(y, ref[0]) and np.allclose(grads.d_positions, ref[1])
            t_f = median_time(lambda: acu_forward(x, layer, backend=be), args.reps)
            t_b = median_time(lambda: acu_backward(dy, cache, layer), args.reps)
            print(f"{str((n, c, d, h, w)):>22s} {be:>7s} {t_f:11.3e} {t_b:11.3e}")


if __name__ == "__main__":
    main()
