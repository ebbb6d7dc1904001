"""Pure-NumPy implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable
(or when CURVEREG_BACKEND=python). Semantics must match
``curvereg._kernels._core`` exactly; the test suite compares both.

Conventions: volume arrays are float32 with shape (nz, ny, nx) in C order
(x fastest), point arrays are float64 with columns (x, y, z) in voxel or
mm units as documented per function.
"""

import numpy as np

# Voxel coordinates this close to an integer snap to it, so that sampling a
# grid exactly at voxel centers reproduces stored values bit-for-bit even
# after a world<->voxel round trip.
_SNAP = 1e-7

_CHUNK = 16384


def trilinear_gather(data: np.ndarray, coords: np.ndarray, fill: float) -> np.ndarray:
    """Sample `data` at fractional voxel coordinates.

    Parameters
    ----------
    data : (nz, ny, nx) float32
    coords : (N, 3) float64, columns (vx, vy, vz) in voxel units
        In-bounds means inside the voxel-center hull [0, n-1] per axis.
    fill : value returned for out-of-bounds coordinates

    Returns
    -------
    (N,) float64
    """
    nz, ny, nx = data.shape
    v = np.asarray(coords, dtype=np.float64)
    r = np.rint(v)
    v = np.where(np.abs(v - r) < _SNAP, r, v)
    vx, vy, vz = v[:, 0], v[:, 1], v[:, 2]

    inb = (
        (vx >= 0.0) & (vx <= nx - 1)
        & (vy >= 0.0) & (vy <= ny - 1)
        & (vz >= 0.0) & (vz <= nz - 1)
    )

    # Clamp so indices are valid everywhere; out-of-bounds replaced at the end.
    vx = np.clip(vx, 0.0, nx - 1)
    vy = np.clip(vy, 0.0, ny - 1)
    vz = np.clip(vz, 0.0, nz - 1)

    ix = np.minimum(np.floor(vx).astype(np.intp), nx - 2)
    iy = np.minimum(np.floor(vy).astype(np.intp), ny - 2)
    iz = np.minimum(np.floor(vz).astype(np.intp), nz - 2)
    fx = vx - ix
    fy = vy - iy
    fz = vz - iz

    d = data.astype(np.float64, copy=False)
    c000 = d[iz, iy, ix]
    c100 = d[iz, iy, ix + 1]
    c010 = d[iz, iy + 1, ix]
    c110 = d[iz, iy + 1, ix + 1]
    c001 = d[iz + 1, iy, ix]
    c101 = d[iz + 1, iy, ix + 1]
    c011 = d[iz + 1, iy + 1, ix]
    c111 = d[iz + 1, iy + 1, ix + 1]

    c00 = c000 * (1.0 - fx) + c100 * fx
    c10 = c010 * (1.0 - fx) + c110 * fx
    c01 = c001 * (1.0 - fx) + c101 * fx
    c11 = c011 * (1.0 - fx) + c111 * fx
    c0 = c00 * (1.0 - fy) + c10 * fy
    c1 = c01 * (1.0 - fy) + c11 * fy
    out = c0 * (1.0 - fz) + c1 * fz

    out[~inb] = fill
    return out


def tps_apply_many(
    points: np.ndarray,
    controls: np.ndarray,
    weights: np.ndarray,
    linear: np.ndarray,
    translation: np.ndarray,
) -> np.ndarray:
    """Evaluate a 3D thin-plate-spline map (kernel U(r)=r) at many points."""
    p = np.asarray(points, dtype=np.float64)
    out = p @ np.asarray(linear, dtype=np.float64).T + np.asarray(translation, dtype=np.float64)
    c = np.asarray(controls, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    for lo in range(0, len(p), _CHUNK):
        hi = min(lo + _CHUNK, len(p))
        diff = p[lo:hi, None, :] - c[None, :, :]
        r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        out[lo:hi] += r @ w
    return out


def tps_inverse_many(
    targets: np.ndarray,
    controls: np.ndarray,
    weights: np.ndarray,
    linear: np.ndarray,
    translation: np.ndarray,
    damping: float,
    tol_mm: float,
    max_iter: int,
) -> tuple[np.ndarray, int]:
    """Invert a TPS map at many target points by damped fixed-point iteration.

    Iterates q <- q - damping * (t(q) - target) from q0 = target, retiring a
    point as soon as |t(q) - target| <= tol_mm (check before step, at most
    max_iter steps and max_iter + 1 checks). Returns the coordinates and the
    number of points that never met the tolerance.
    """
    tgt = np.asarray(targets, dtype=np.float64)
    q = tgt.copy()
    active = np.arange(len(tgt))
    tol2 = tol_mm * tol_mm
    for it in range(max_iter + 1):
        if len(active) == 0:
            break
        r = tps_apply_many(q[active], controls, weights, linear, translation) - tgt[active]
        err2 = np.einsum("ij,ij->i", r, r)
        undone = err2 > tol2
        if it < max_iter:
            q[active[undone]] -= damping * r[undone]
        active = active[undone]
    return q, int(len(active))


def pool_cell_stats(
    vol: np.ndarray,
    spacing: tuple[float, float, float],
    cell: tuple[int, int, int],
) -> np.ndarray:
    """Pool per-voxel statistics over a regular cell partition.

    For each cell of `cell` = (cx, cy, cz) voxels (edge cells may be
    partial) returns [mean, std, mean d/dx, mean d/dy, mean d/dz] of the
    input field, gradients in 1/mm via central differences (one-sided at
    volume borders). Rows are ordered x fastest.

    Returns
    -------
    (n_cells, 5) float64
    """
    nz, ny, nx = vol.shape
    sx, sy, sz = spacing
    cx, cy, cz = cell
    v = vol.astype(np.float64, copy=False)

    gz, gy, gx = np.gradient(v, sz, sy, sx)

    def reduce3(a: np.ndarray) -> np.ndarray:
        a = np.add.reduceat(a, np.arange(0, nz, cz), axis=0)
        a = np.add.reduceat(a, np.arange(0, ny, cy), axis=1)
        a = np.add.reduceat(a, np.arange(0, nx, cx), axis=2)
        return a

    ones = np.ones_like(v)
    cnt = reduce3(ones)
    mean = reduce3(v) / cnt
    sq = reduce3(v * v) / cnt
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    mgx = reduce3(gx) / cnt
    mgy = reduce3(gy) / cnt
    mgz = reduce3(gz) / cnt

    cols = [mean, std, mgx, mgy, mgz]
    return np.stack([c.reshape(-1) for c in cols], axis=1)
