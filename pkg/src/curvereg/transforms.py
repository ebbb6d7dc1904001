"""3D spatial transforms: affine maps, thin-plate splines, volume warping.

All transforms act on world (mm) coordinates, never voxel indices, so
anisotropic spacing is safe. The TPS uses the 3D kernel U(r) = r (the
dimension-correct biharmonic fundamental solution up to a constant) and is
solved by the QR null-space method, which enforces the side conditions
``sum(w) = 0`` and ``sum(w c^T) = 0`` to machine precision and reproduces
affine control motions with exactly zero kernel weights.

Volumes are resampled by backward warping: each output voxel center q is
filled with ``trilinear_sample(input, t^{-1}(q))``. The TPS inverse has no
closed form and is computed by a damped fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from . import _kernels
from .errors import (
    ControlMismatch,
    DegenerateControls,
    InverseNonConvergent,
    SingularTransform,
)
from .volume import Geometry, VoxelGrid

_DET_TOL = 1e-12
_SIDE_CONDITION_TOL = 1e-8

TPS_INVERSE_DAMPING = 0.5
TPS_INVERSE_TOL_MM = 1e-3
TPS_INVERSE_MAX_ITER = 50


@dataclass(frozen=True)
class Affine3:
    """Global linear map plus translation: p -> linear @ p + translation."""

    linear: np.ndarray  # (3, 3), unitless
    translation: np.ndarray  # (3,), mm

    def __post_init__(self):
        lin = np.ascontiguousarray(self.linear, dtype=np.float64).reshape(3, 3)
        tra = np.ascontiguousarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(tra))):
            raise ValueError("affine entries must be finite")
        lin.flags.writeable = False
        tra.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", tra)

    @classmethod
    def identity(cls) -> "Affine3":
        return cls(np.eye(3), np.zeros(3))

    @property
    def is_invertible(self) -> bool:
        return abs(np.linalg.det(self.linear)) > _DET_TOL

    def apply(self, p) -> np.ndarray:
        return self.linear @ np.asarray(p, dtype=np.float64) + self.translation

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.linear.T + self.translation

    def invert(self) -> "Affine3":
        if not self.is_invertible:
            raise SingularTransform(
                f"linear part singular (|det| = {abs(np.linalg.det(self.linear)):.3e})"
            )
        inv = np.linalg.inv(self.linear)
        return Affine3(inv, -inv @ self.translation)

    def inverse_points(self, targets: np.ndarray) -> np.ndarray:
        return self.invert().apply_points(targets)


def affine_apply(t: Affine3, p) -> np.ndarray:
    return t.apply(p)


def affine_invert(t: Affine3) -> Affine3:
    return t.invert()


def affine_compose(a: Affine3, b: Affine3) -> Affine3:
    """Composition applying b first, then a."""
    return Affine3(a.linear @ b.linear, a.linear @ b.translation + a.translation)


@dataclass(frozen=True)
class Tps3:
    """Thin-plate spline p -> affine_part(p) + sum_i w_i U(|p - c_i|), U(r)=r."""

    control_points: np.ndarray  # (N, 3) mm
    affine_part: Affine3
    weights: np.ndarray  # (N, 3)
    lam: float = 0.0  # kernel-block regularization (serialized as "lambda")

    def __post_init__(self):
        c = np.ascontiguousarray(self.control_points, dtype=np.float64)
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3 or c.shape[0] < 4:
            raise DegenerateControls(f"need >= 4 control points, got shape {c.shape}")
        if w.shape != c.shape:
            raise ControlMismatch(f"weights shape {w.shape} != controls shape {c.shape}")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        P = np.concatenate([np.ones((len(c), 1)), c], axis=1)
        if np.linalg.matrix_rank(P, tol=1e-9 * max(1.0, float(np.abs(c).max()))) < 4:
            raise DegenerateControls("control points are coplanar")
        side = P.T @ w
        scale = max(1.0, float(np.abs(w).sum()) * max(1.0, float(np.abs(P).max())))
        if float(np.abs(side).max()) > _SIDE_CONDITION_TOL * scale:
            raise ValueError(
                f"weights violate TPS side conditions (max residual {np.abs(side).max():.3e})"
            )
        c.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "control_points", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "lam", float(self.lam))

    def apply(self, p) -> np.ndarray:
        return self.apply_points(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        return _kernels.tps_apply_many(
            points, self.control_points, self.weights,
            self.affine_part.linear, self.affine_part.translation,
        )

    def inverse_points(self, targets: np.ndarray) -> np.ndarray:
        """Backward-map target points with the damped fixed-point iteration."""
        coords, n_fail = _kernels.tps_inverse_many(
            targets, self.control_points, self.weights,
            self.affine_part.linear, self.affine_part.translation,
            TPS_INVERSE_DAMPING, TPS_INVERSE_TOL_MM, TPS_INVERSE_MAX_ITER,
        )
        if n_fail:
            raise InverseNonConvergent(
                f"TPS inverse: {n_fail} of {len(np.atleast_2d(targets))} points did not reach "
                f"{TPS_INVERSE_TOL_MM} mm in {TPS_INVERSE_MAX_ITER} iterations"
            )
        return coords


@dataclass(frozen=True)
class CompositeTransform:
    """Transforms applied in sequence: stages[0] first, then stages[1], ..."""

    stages: tuple

    def __post_init__(self):
        if not self.stages:
            raise ValueError("CompositeTransform needs at least one stage")
        object.__setattr__(self, "stages", tuple(self.stages))

    def apply(self, p) -> np.ndarray:
        return self.apply_points(np.asarray(p, dtype=np.float64).reshape(1, 3))[0]

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        out = np.asarray(points, dtype=np.float64)
        for stage in self.stages:
            out = stage.apply_points(out)
        return out

    def inverse_points(self, targets: np.ndarray) -> np.ndarray:
        out = np.asarray(targets, dtype=np.float64)
        for stage in reversed(self.stages):
            out = stage.inverse_points(out)
        return out


# ---------------------------------------------------------------------------
# TPS fitting
# ---------------------------------------------------------------------------

class TpsSolver:
    """Factorized TPS system for one fixed control set.

    Splitting the weights into the null space of the polynomial block
    (P = Q1 R, W = Q2 gamma) keeps the side conditions exact and lets
    repeated fits against new destinations reuse one LU factorization,
    which the registration stage's coordinate descent depends on.
    """

    def __init__(self, src_controls: np.ndarray, lam: float = 0.0):
        c = np.ascontiguousarray(src_controls, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 3:
            raise ControlMismatch(f"controls must be (N, 3), got {c.shape}")
        n = len(c)
        if n < 4:
            raise ControlMismatch(f"need >= 4 control points, got {n}")
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        P = np.concatenate([np.ones((n, 1)), c], axis=1)
        Q, R = np.linalg.qr(P, mode="complete")
        r_diag = np.abs(np.diag(R[:4, :4]))
        if r_diag.min() <= 1e-9 * max(1.0, r_diag.max()):
            raise DegenerateControls("control points are coplanar")
        diff = c[:, None, :] - c[None, :, :]
        K = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        # The U(r)=r form is conditionally *negative* definite, so the
        # weight-shrinking regularization direction is K - lam*I (adding
        # +lam*I would drive the system through a singularity).
        K_eff = K - lam * np.eye(n)
        self.controls = c
        self.lam = float(lam)
        self._Q1 = Q[:, :4]
        self._Q2 = Q[:, 4:]
        self._R = R[:4, :4]
        self._K = K_eff
        M = self._Q2.T @ K_eff @ self._Q2
        try:
            self._lu = scipy.linalg.lu_factor(M)
        except scipy.linalg.LinAlgError as e:  # pragma: no cover - rank checked above
            raise DegenerateControls(f"TPS system singular: {e}") from e

    def fit(self, dst_controls: np.ndarray) -> Tps3:
        dst = np.ascontiguousarray(dst_controls, dtype=np.float64)
        if dst.shape != self.controls.shape:
            raise ControlMismatch(
                f"destination shape {dst.shape} != controls shape {self.controls.shape}"
            )
        gamma = scipy.linalg.lu_solve(self._lu, self._Q2.T @ dst)
        W = self._Q2 @ gamma
        A = scipy.linalg.solve_triangular(self._R, self._Q1.T @ (dst - self._K @ W))
        affine = Affine3(A[1:4].T, A[0])
        return Tps3(control_points=self.controls, affine_part=affine, weights=W, lam=self.lam)


def tps_fit(src_controls: np.ndarray, dst_controls: np.ndarray, lam: float = 0.0) -> Tps3:
    """Fit the TPS sending src_controls to dst_controls.

    With lam = 0 the map interpolates the controls exactly; lam > 0
    regularizes the kernel block (lam * I), trading exactness for smoothness
    and shrinking the kernel weights toward a pure affine map.
    """
    src = np.ascontiguousarray(src_controls, dtype=np.float64)
    dst = np.ascontiguousarray(dst_controls, dtype=np.float64)
    if src.shape != dst.shape:
        raise ControlMismatch(f"control counts differ: {src.shape} vs {dst.shape}")
    return TpsSolver(src, lam).fit(dst)


def tps_apply(t: Tps3, p) -> np.ndarray:
    return t.apply(p)


# ---------------------------------------------------------------------------
# Volume warping
# ---------------------------------------------------------------------------

def warp_volume(
    grid: VoxelGrid,
    t,
    out_geometry: Geometry | None = None,
    channels: Sequence[str] | None = None,
) -> VoxelGrid:
    """Backward-warp a volume: output(q) = input(t^{-1}(q)).

    `t` is any transform with `inverse_points` (Affine3, Tps3 or a
    composite). Out-of-bounds samples get each channel's fill value.
    """
    geom = out_geometry or grid.geometry
    labels = tuple(channels) if channels is not None else grid.channels
    targets = geom.voxel_centers()
    sources = t.inverse_points(targets)
    voxels = grid.world_to_voxel(sources)
    arrays, fills = [], []
    for label in labels:
        fill = grid.channel_fill(label)
        vals = _kernels.trilinear_gather(grid.channel_data(label), voxels, fill)
        arrays.append(vals.astype(np.float32))
        fills.append(fill)
    return VoxelGrid(geometry=geom, channels=labels, data=tuple(arrays), fill_values=tuple(fills))


# ---------------------------------------------------------------------------
# Synthetic deformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeformationConfig:
    """Bounds for random synthetic transforms (all draws are uniform).

    Defaults bracket the misalignment scale of repeat-visit scans; rotation,
    scale and shear act about the world origin, so synthetic volumes should
    be centered there.
    """

    max_rotation_deg: float = 10.0
    max_translation_mm: float = 15.0
    max_log_scale: float = 0.1
    max_shear: float = 0.05
    tps_grid: tuple[int, int, int] = (4, 4, 4)
    max_tps_jitter_mm: float = 8.0
    seed: int = 0

    def __post_init__(self):
        maxima = (
            self.max_rotation_deg,
            self.max_translation_mm,
            self.max_log_scale,
            self.max_shear,
            self.max_tps_jitter_mm,
        )
        if any(m < 0 for m in maxima):
            raise ValueError("deformation maxima must be >= 0")
        if any(int(g) < 2 for g in self.tps_grid):
            raise ValueError(f"tps_grid dims must be >= 2, got {self.tps_grid}")
        object.__setattr__(self, "tps_grid", tuple(int(g) for g in self.tps_grid))


def _rotation_matrix(angles_deg: np.ndarray) -> np.ndarray:
    ax, ay, az = np.deg2rad(angles_deg)
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def control_lattice(bounds: tuple[np.ndarray, np.ndarray], grid: tuple[int, int, int]) -> np.ndarray:
    """Regular (gx, gy, gz) lattice spanning the bounds, x fastest."""
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bounds)
    axes = [np.linspace(lo[i], hi[i], grid[i]) for i in range(3)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.stack([xx.reshape(-1), yy.reshape(-1), zz.reshape(-1)], axis=1)


def random_transform(
    cfg: DeformationConfig, bounds: tuple[np.ndarray, np.ndarray]
) -> tuple[Affine3, Tps3]:
    """Draw a seeded random deformation: affine R*S*Sh + t plus lattice TPS.

    `bounds` is the (lo, hi) world extent the TPS control lattice spans
    (usually `grid.geometry.bounds()`). The full transform applies the
    affine first, then the TPS. With all maxima zero both parts are exact
    identities.
    """
    rng = np.random.default_rng(cfg.seed)
    angles = rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg, 3)
    log_scales = rng.uniform(-cfg.max_log_scale, cfg.max_log_scale, 3)
    shears = rng.uniform(-cfg.max_shear, cfg.max_shear, 3)
    translation = rng.uniform(-cfg.max_translation_mm, cfg.max_translation_mm, 3)
    if cfg.max_rotation_deg == 0:
        angles = np.zeros(3)
    if cfg.max_log_scale == 0:
        log_scales = np.zeros(3)
    if cfg.max_shear == 0:
        shears = np.zeros(3)
    if cfg.max_translation_mm == 0:
        translation = np.zeros(3)

    shear = np.array([[1.0, shears[0], shears[1]], [0.0, 1.0, shears[2]], [0.0, 0.0, 1.0]])
    linear = _rotation_matrix(angles) @ np.diag(np.exp(log_scales)) @ shear
    affine = Affine3(linear, translation)

    controls = control_lattice(bounds, cfg.tps_grid)
    jitter = rng.uniform(-cfg.max_tps_jitter_mm, cfg.max_tps_jitter_mm, controls.shape)
    if cfg.max_tps_jitter_mm == 0:
        jitter = np.zeros_like(controls)
    tps = tps_fit(controls, controls + jitter, lam=0.0)
    return affine, tps


# ---------------------------------------------------------------------------
# JSON transform files
# ---------------------------------------------------------------------------

def affine_to_json_dict(t: Affine3) -> dict:
    return {"linear": t.linear.tolist(), "translation": t.translation.tolist()}


def affine_from_json_dict(doc: dict) -> Affine3:
    return Affine3(np.asarray(doc["linear"], dtype=np.float64),
                   np.asarray(doc["translation"], dtype=np.float64))


def tps_to_json_dict(t: Tps3) -> dict:
    return {
        "controls": t.control_points.tolist(),
        "weights": t.weights.tolist(),
        "affine_part": affine_to_json_dict(t.affine_part),
        "lambda": t.lam,
    }


def tps_from_json_dict(doc: dict) -> Tps3:
    return Tps3(
        control_points=np.asarray(doc["controls"], dtype=np.float64),
        affine_part=affine_from_json_dict(doc["affine_part"]),
        weights=np.asarray(doc["weights"], dtype=np.float64),
        lam=float(doc.get("lambda", 0.0)),
    )


def transform_to_json_dict(t) -> dict:
    """Serialize a transform; a composite of (affine, tps) keeps both keys."""
    if isinstance(t, Affine3):
        return {"affine": affine_to_json_dict(t)}
    if isinstance(t, Tps3):
        return {"tps": tps_to_json_dict(t)}
    if isinstance(t, CompositeTransform):
        stages = t.stages
        if len(stages) == 2 and isinstance(stages[0], Affine3) and isinstance(stages[1], Tps3):
            return {"affine": affine_to_json_dict(stages[0]), "tps": tps_to_json_dict(stages[1])}
        raise ValueError("only (affine, tps) composites can be serialized")
    raise TypeError(f"not a transform: {type(t).__name__}")


def transform_from_json_dict(doc: dict):
    affine = affine_from_json_dict(doc["affine"]) if doc.get("affine") else None
    tps = tps_from_json_dict(doc["tps"]) if doc.get("tps") else None
    if affine is not None and tps is not None:
        return CompositeTransform((affine, tps))
    if affine is not None:
        return affine
    if tps is not None:
        return tps
    raise ValueError("transform JSON needs an 'affine' and/or 'tps' entry")
