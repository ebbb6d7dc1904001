"""Reproducible dual-channel phantoms with analytically known key curves.

A phantom has a CT channel (air background plus ellipsoidal bone/tissue
structures) and a PET channel (smooth low background plus bright tubes whose
centerlines are exact quadratics in z). The centerlines double as ground
truth curves, so benchmark baselines carry no annotation noise. Tubes get
disjoint z bands, which keeps each one the unambiguous intensity argmax of
its slices.

Volumes are centered on the world origin so the synthetic deformations of
:mod:`curvereg.transforms` (which rotate/scale about the origin) stay sane.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .keycurve import CurveSet, KeyCurve, KeyPoint, fit_curve_set, transform_points
from .transforms import CompositeTransform, DeformationConfig, random_transform, warp_volume
from .volume import CHANNEL_CT, CHANNEL_PET, VoxelGrid, make_grid

MIN_DIMS = (32, 32, 64)

#: Noiseless annotations generated per ground-truth curve.
ANNOTATIONS_PER_CURVE = 9

_PET_BACKGROUND = 0.25
_PET_BACKGROUND_AMP = 0.6


@dataclass(frozen=True)
class PhantomSpec:
    """Size, seeding and intensity ranges of a synthetic phantom."""

    dims: tuple[int, int, int] = (64, 64, 96)
    spacing: tuple[float, float, float] = (3.5, 3.5, 3.5)
    seed: int = 0
    n_structures: int = 6
    ct_intensity_range: tuple[float, float] = (150.0, 900.0)
    pet_intensity_range: tuple[float, float] = (5.0, 12.0)
    perturbation: float = 0.0

    def __post_init__(self):
        if any(d < m for d, m in zip(self.dims, MIN_DIMS)):
            raise ValueError(f"dims must be >= {MIN_DIMS}, got {self.dims}")
        if not 0.0 <= self.perturbation < 1.0:
            raise ValueError(f"perturbation must be in [0, 1), got {self.perturbation}")
        for rng_ in (self.ct_intensity_range, self.pet_intensity_range):
            if not all(np.isfinite(rng_)):
                raise ValueError(f"intensity range must be finite, got {rng_}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))


class SyntheticPair(NamedTuple):
    """A deformed scan pair with ground truth; first five fields are the
    (src, tgt, transform, src_curves, tgt_curves) contract, annotations ride
    along for convenience."""

    src: VoxelGrid
    tgt: VoxelGrid
    transform: object
    src_curves: CurveSet
    tgt_curves: CurveSet
    src_points: list
    tgt_points: list


def _world_axes(spec: PhantomSpec):
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing
    origin = (-nx * sx / 2.0, -ny * sy / 2.0, -nz * sz / 2.0)
    xs = origin[0] + (np.arange(nx) + 0.5) * sx
    ys = origin[1] + (np.arange(ny) + 0.5) * sy
    zs = origin[2] + (np.arange(nz) + 0.5) * sz
    return origin, xs, ys, zs


def _quadratic_through(z3: np.ndarray, v3: np.ndarray) -> tuple[float, float, float]:
    c = np.polyfit(z3, v3, 2)
    return float(c[0]), float(c[1]), float(c[2])


def make_phantom(spec: PhantomSpec) -> tuple[VoxelGrid, CurveSet]:
    """Generate one phantom and its analytic ground-truth curve set."""
    rng = np.random.default_rng(spec.seed)
    nx, ny, nz = spec.dims
    origin, xs, ys, zs = _world_axes(spec)
    X, Y = np.meshgrid(xs, ys, indexing="xy")  # (ny, nx)
    extent = np.array([nx * spec.spacing[0], ny * spec.spacing[1], nz * spec.spacing[2]])

    # --- CT: air background, one soft-tissue body, brighter inner structures
    ct = np.full((nz, ny, nx), -1000.0, dtype=np.float64)
    Z3, Y3, X3 = np.meshgrid(zs, ys, xs, indexing="ij")
    body_axes = 0.5 * extent * np.array([0.85, 0.85, 0.95])
    body = (X3 / body_axes[0]) ** 2 + (Y3 / body_axes[1]) ** 2 + (Z3 / body_axes[2]) ** 2 <= 1.0
    ct[body] = 40.0
    for _ in range(spec.n_structures):
        center = rng.uniform(-0.30, 0.30, 3) * extent
        axes = rng.uniform(0.06, 0.18, 3) * extent
        value = rng.uniform(*spec.ct_intensity_range)
        mask = (
            ((X3 - center[0]) / axes[0]) ** 2
            + ((Y3 - center[1]) / axes[1]) ** 2
            + ((Z3 - center[2]) / axes[2]) ** 2
        ) <= 1.0
        ct[mask] = np.maximum(ct[mask], value)

    # --- PET: smooth low background plus quadratic-centerline tubes
    pet = np.full((nz, ny, nx), _PET_BACKGROUND, dtype=np.float64)
    for _ in range(3):
        center = rng.uniform(-0.25, 0.25, 3) * extent
        sigma = rng.uniform(0.20, 0.45, 3) * extent
        amp = rng.uniform(0.3, 1.0) * _PET_BACKGROUND_AMP
        blob = amp * np.exp(
            -0.5 * (
                ((X3 - center[0]) / sigma[0]) ** 2
                + ((Y3 - center[1]) / sigma[1]) ** 2
                + ((Z3 - center[2]) / sigma[2]) ** 2
            )
        )
        pet += blob

    n_tubes = int(rng.integers(2, 5))
    z_lo_all, z_hi_all = zs[0], zs[-1]
    band_edges = np.linspace(z_lo_all, z_hi_all, n_tubes + 1)
    curves: dict[str, KeyCurve] = {}
    for k in range(n_tubes):
        band_lo, band_hi = band_edges[k], band_edges[k + 1]
        pad = 0.08 * (band_hi - band_lo)
        z_min, z_max = band_lo + pad, band_hi - pad
        anchors_z = np.array([z_min, 0.5 * (z_min + z_max), z_max])
        end_x = rng.uniform(-0.28, 0.28, 2) * extent[0]
        end_y = rng.uniform(-0.28, 0.28, 2) * extent[1]
        mid_x = end_x.mean() + rng.uniform(-0.12, 0.12) * extent[0]
        mid_y = end_y.mean() + rng.uniform(-0.12, 0.12) * extent[1]
        coeff_x = _quadratic_through(anchors_z, np.array([end_x[0], mid_x, end_x[1]]))
        coeff_y = _quadratic_through(anchors_z, np.array([end_y[0], mid_y, end_y[1]]))
        radius = rng.uniform(8.0, 15.0)
        peak = rng.uniform(*spec.pet_intensity_range)

        in_band = (zs >= z_min) & (zs <= z_max)
        for iz in np.nonzero(in_band)[0]:
            z = zs[iz]
            cx = (coeff_x[0] * z + coeff_x[1]) * z + coeff_x[2]
            cy = (coeff_y[0] * z + coeff_y[1]) * z + coeff_y[2]
            d2 = (X - cx) ** 2 + (Y - cy) ** 2
            pet[iz] += peak * np.exp(-0.5 * d2 / radius**2)

        cid = f"tube-{k:02d}"
        curves[cid] = KeyCurve(
            curve_id=cid,
            coeff_x=coeff_x,
            coeff_y=coeff_y,
            z_min=float(z_min),
            z_max=float(z_max),
            residual_var_x=0.0,
            residual_var_y=0.0,
            coeff_cov_x=np.zeros((3, 3)),
            coeff_cov_y=np.zeros((3, 3)),
            n_points=ANNOTATIONS_PER_CURVE,
        )

    grid = make_grid(
        spec.dims, spec.spacing, origin, (CHANNEL_CT, CHANNEL_PET),
        (ct.astype(np.float32), pet.astype(np.float32)),
    )
    return grid, CurveSet(visit_id="src", curves=curves)


def annotate_curves(curves: CurveSet, n_per_curve: int = ANNOTATIONS_PER_CURVE,
                    visit_id: str = "") -> list[KeyPoint]:
    """Noiseless annotations: n points per curve at uniform z in its span."""
    visit = visit_id or curves.visit_id
    points: list[KeyPoint] = []
    for cid in sorted(curves.curves):
        curve = curves.curves[cid]
        zvals = np.linspace(curve.z_min, curve.z_max, n_per_curve)
        a2, a1, a0 = curve.coeff_x
        b2, b1, b0 = curve.coeff_y
        for z in zvals:
            points.append(
                KeyPoint(
                    curve_id=cid,
                    z=float(z),
                    x=float((a2 * z + a1) * z + a0),
                    y=float((b2 * z + b1) * z + b0),
                    visit_id=visit,
                )
            )
    return points


def _smooth_multiplier(spec: PhantomSpec, shape: tuple[int, int, int],
                       amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Smooth multiplicative field 1 + amplitude * s(p), |s| <= 1."""
    _, xs, ys, zs = _world_axes(spec)
    Z3, Y3, X3 = np.meshgrid(zs, ys, xs, indexing="ij")
    extent = min(xs[-1] - xs[0], ys[-1] - ys[0], zs[-1] - zs[0])
    field = np.zeros(shape, dtype=np.float64)
    amps = rng.uniform(0.5, 1.0, 4)
    for a in amps:
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        wavelength = rng.uniform(0.6, 1.5) * extent
        phase = rng.uniform(0.0, 2.0 * np.pi)
        arg = 2.0 * np.pi / wavelength * (
            direction[0] * X3 + direction[1] * Y3 + direction[2] * Z3
        )
        field += a * np.cos(arg + phase)
    field /= amps.sum()
    return 1.0 + amplitude * field


def make_pair(
    spec: PhantomSpec,
    deform: DeformationConfig | None = None,
    perturb: float | None = None,
    transform=None,
) -> SyntheticPair:
    """Generate a (source, deformed target) pair with known ground truth.

    The target volume is the source backward-warped by the drawn transform
    (affine then TPS), optionally followed by a smooth multiplicative
    intensity jitter of relative amplitude `perturb` on every target channel
    (geometry untouched). Target curves are refit from the transformed
    source annotations. Pass `transform` to use an exact known deformation
    instead of a random draw.
    """
    src, src_curves = make_phantom(spec)
    src_points = annotate_curves(src_curves, visit_id="src")

    if transform is None:
        cfg = deform if deform is not None else DeformationConfig()
        affine, tps = random_transform(cfg, src.geometry.bounds())
        transform = CompositeTransform((affine, tps))
    tgt = warp_volume(src, transform)

    amplitude = spec.perturbation if perturb is None else float(perturb)
    if amplitude > 0.0:
        rng = np.random.default_rng([spec.seed, 104729])
        mult = _smooth_multiplier(spec, tgt.channel_data(CHANNEL_CT).shape, amplitude, rng)
        tgt = make_grid(
            tgt.dims, tgt.spacing, tgt.origin, tgt.channels,
            tuple((tgt.channel_data(c) * mult).astype(np.float32) for c in tgt.channels),
            tgt.fill_values,
        )

    tgt_points = [replace(p, visit_id="tgt") for p in transform_points(src_points, transform)]
    tgt_curves = fit_curve_set(tgt_points, "tgt")
    return SyntheticPair(src, tgt, transform, src_curves, tgt_curves, src_points, tgt_points)
