#!/usr/bin/env python3
"""Compare the compiled kernel extension against the NumPy fallback.

Runs the hot kernels on representative registration-sized workloads and
prints per-kernel timings plus the speedup. The two backends must agree
numerically (also enforced by tests/test_kernels.py); this script checks a
loose tolerance as a sanity guard while timing.

Usage: python3 benchmarks/bench_backends.py [--repeats 5]
"""

import argparse
import sys
import time

import numpy as np

from curvereg._kernels import _py

try:
    from curvereg._kernels import _core
except ImportError:
    _core = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads():
    rng = np.random.default_rng(0)
    vol = rng.normal(size=(96, 64, 64)).astype(np.float32)
    coords = rng.uniform(-4, 64, (96 * 64 * 64, 3))

    n_ctrl = 64
    controls = rng.uniform(-110, 110, (n_ctrl, 3))
    P = np.c_[np.ones(n_ctrl), controls]
    raw = rng.normal(size=(n_ctrl, 3))
    weights = 0.03 * (raw - P @ np.linalg.lstsq(P, raw, rcond=None)[0])
    linear = np.eye(3)
    translation = np.zeros(3)
    pts = rng.uniform(-100, 100, (32 * 32 * 48, 3))

    return [
        (
            "trilinear_gather (393k samples)",
            lambda impl: impl.trilinear_gather(vol, coords, -1000.0),
        ),
        (
            "tps_apply_many (49k pts x 64 ctrl)",
            lambda impl: impl.tps_apply_many(pts, controls, weights, linear, translation),
        ),
        (
            "tps_inverse_many (49k pts, tol 1e-3)",
            lambda impl: impl.tps_inverse_many(
                pts, controls, weights, linear, translation, 0.5, 1e-3, 50
            ),
        ),
        (
            "pool_cell_stats (393k voxels)",
            lambda impl: impl.pool_cell_stats(vol, (3.5, 3.5, 3.5), (4, 4, 4)),
        ),
    ]


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if _core is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)

    print(f"{'kernel':40s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
    for name, call in workloads():
        t_py, out_py = timeit(lambda: call(_py), args.repeats)
        if _core is None:
            print(f"{name:40s} {t_py * 1e3:9.1f}ms {'-':>10s} {'-':>8s}")
            continue
        t_c, out_c = timeit(lambda: call(_core), args.repeats)
        a = out_py[0] if isinstance(out_py, tuple) else out_py
        b = out_c[0] if isinstance(out_c, tuple) else out_c
        if np.abs(np.asarray(a) - np.asarray(b)).max() > 1e-6:
            print(f"{name}: BACKEND MISMATCH", file=sys.stderr)
            return 1
        print(f"{name:40s} {t_py * 1e3:9.1f}ms {t_c * 1e3:9.1f}ms {t_py / t_c:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
