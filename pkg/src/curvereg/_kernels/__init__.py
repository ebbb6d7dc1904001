"""Kernel backend selection.

The hot inner loops (trilinear gathering, TPS evaluation and inversion,
cell-statistics pooling) exist twice: a Cython extension compiled at install
time and a pure-NumPy fallback. The compiled backend is picked when
available; set CURVEREG_BACKEND=python or CURVEREG_BACKEND=compiled to force
one side (the latter raises if the extension is missing).

``benchmarks/bench_backends.py`` compares the two.
"""

import os

import numpy as np

from . import _py

_choice = os.environ.get("CURVEREG_BACKEND", "auto").lower()

if _choice not in ("auto", "compiled", "python"):
    raise ValueError(f"CURVEREG_BACKEND must be auto|compiled|python, got {_choice!r}")

if _choice == "python":
    _impl = _py
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "CURVEREG_BACKEND=compiled but the curvereg._kernels._core "
                "extension is not built; reinstall with a C compiler available"
            ) from None
        _impl = _py
        BACKEND = "python"


def n_threads() -> int:
    """Worker parallelism cap: CURVEREG_THREADS, default machine cores."""
    raw = os.environ.get("CURVEREG_THREADS", "")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        n = os.cpu_count() or 1
    return n


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def trilinear_gather(data, coords, fill):
    data = np.ascontiguousarray(data, dtype=np.float32)
    return _impl.trilinear_gather(data, _f64(coords), float(fill))


def tps_apply_many(points, controls, weights, linear, translation):
    return _impl.tps_apply_many(
        _f64(points), _f64(controls), _f64(weights), _f64(linear), _f64(translation)
    )


def tps_inverse_many(targets, controls, weights, linear, translation, damping, tol_mm, max_iter):
    return _impl.tps_inverse_many(
        _f64(targets), _f64(controls), _f64(weights), _f64(linear), _f64(translation),
        float(damping), float(tol_mm), int(max_iter),
    )


def pool_cell_stats(vol, spacing, cell):
    vol = np.ascontiguousarray(vol, dtype=np.float32)
    sx, sy, sz = (float(s) for s in spacing)
    cx, cy, cz = (int(c) for c in cell)
    return _impl.pool_cell_stats(vol, (sx, sy, sz), (cx, cy, cz))
