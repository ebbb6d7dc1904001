"""Key curves: quadratic-in-z models of annotated structures.

A key curve maps a z coordinate (mm) to in-plane coordinates
``x(z) = a2 z^2 + a1 z + a0`` and likewise for y. Curves are fit per axis by
ordinary least squares to 2D slice annotations, carry their coefficient
covariance for uncertainty bands, and support the curve-distance alignment
metric: the mean 2D distance between two curves over uniformly sampled z in
their overlap, pooled into an RMSE across a whole curve set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateSystem, InsufficientPoints, NoOverlap, NoSharedCurves

#: Annotator click scatter (1-sigma, mm); used as the floor of displayed
#: uncertainty bands.
SELECTION_SIGMA_X = 2.52
SELECTION_SIGMA_Y = 1.96

DEFAULT_METRIC_SAMPLES = 64

_SINGULAR_TOL = 1e-10


@dataclass(frozen=True)
class KeyPoint:
    """One 2D annotation: a click at (x, y) on slice z of a named structure."""

    curve_id: str
    z: float
    x: float
    y: float
    visit_id: str = ""
    source_slice_index: int | None = None

    def __post_init__(self):
        if not self.curve_id:
            raise ValueError("curve_id must be nonempty")
        if not all(np.isfinite([self.z, self.x, self.y])):
            raise ValueError(f"non-finite coordinates for {self.curve_id}")


@dataclass(frozen=True)
class KeyCurve:
    """Per-axis quadratic in z with fit covariance and fitted z span."""

    curve_id: str
    coeff_x: tuple[float, float, float]  # (a2, a1, a0)
    coeff_y: tuple[float, float, float]
    z_min: float
    z_max: float
    residual_var_x: float
    residual_var_y: float
    coeff_cov_x: np.ndarray  # (3, 3)
    coeff_cov_y: np.ndarray
    n_points: int

    def __post_init__(self):
        if not self.z_min < self.z_max:
            raise ValueError(f"need z_min < z_max, got [{self.z_min}, {self.z_max}]")
        if self.n_points < 3:
            raise ValueError(f"n_points must be >= 3, got {self.n_points}")
        for name in ("coeff_cov_x", "coeff_cov_y"):
            c = np.asarray(getattr(self, name), dtype=np.float64).reshape(3, 3)
            c = 0.5 * (c + c.T)
            c.flags.writeable = False
            object.__setattr__(self, name, c)
        object.__setattr__(self, "coeff_x", tuple(float(c) for c in self.coeff_x))
        object.__setattr__(self, "coeff_y", tuple(float(c) for c in self.coeff_y))


@dataclass(frozen=True)
class CurveSet:
    """All fitted curves of one visit, keyed by curve_id."""

    visit_id: str
    curves: dict[str, KeyCurve]

    def __post_init__(self):
        for cid, curve in self.curves.items():
            if cid != curve.curve_id:
                raise ValueError(f"curve keyed {cid!r} carries id {curve.curve_id!r}")

    def shared_ids(self, other: "CurveSet") -> list[str]:
        return sorted(set(self.curves) & set(other.curves))


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def fit_curve(points: list[KeyPoint]) -> KeyCurve:
    """Least-squares quadratic fit of one curve's annotations.

    z is centered and scaled to [-1, 1] before forming the Vandermonde
    system (conditioning for spans of hundreds of mm); coefficients and
    their covariance are mapped back to the raw-z basis, which gives exactly
    the raw-basis normal-equations solution. Residual variance is
    SSR/(n - 3) for n > 3, else 0.
    """
    if not points:
        raise InsufficientPoints("no points")
    ids = {p.curve_id for p in points}
    if len(ids) != 1:
        raise ValueError(f"points mix curve ids: {sorted(ids)}")
    z = np.array([p.z for p in points], dtype=np.float64)
    x = np.array([p.x for p in points], dtype=np.float64)
    y = np.array([p.y for p in points], dtype=np.float64)
    n = len(points)
    if len(np.unique(z)) < 3:
        raise InsufficientPoints(
            f"curve {points[0].curve_id!r}: need >= 3 distinct z values, got {len(np.unique(z))}"
        )

    z0 = 0.5 * (z.min() + z.max())
    s = 0.5 * (z.max() - z.min())
    u = (z - z0) / s
    V = np.stack([u * u, u, np.ones_like(u)], axis=1)
    G = V.T @ V
    sval = np.linalg.svd(V, compute_uv=False)
    if sval[-1] ** 2 <= _SINGULAR_TOL:
        raise DegenerateSystem(
            f"curve {points[0].curve_id!r}: normal equations singular (z values too clustered)"
        )
    Ginv = np.linalg.inv(G)

    # Raw-basis coefficients b_raw = T b_scaled for u = (z - z0)/s.
    T = np.array(
        [
            [1.0 / s**2, 0.0, 0.0],
            [-2.0 * z0 / s**2, 1.0 / s, 0.0],
            [z0**2 / s**2, -z0 / s, 1.0],
        ]
    )

    def solve_axis(vals: np.ndarray) -> tuple[tuple[float, float, float], float, np.ndarray]:
        b = Ginv @ (V.T @ vals)
        r = vals - V @ b
        ssr = float(r @ r)
        var = ssr / (n - 3) if n > 3 else 0.0
        cov = T @ (var * Ginv) @ T.T
        return tuple((T @ b).tolist()), var, cov

    coeff_x, var_x, cov_x = solve_axis(x)
    coeff_y, var_y, cov_y = solve_axis(y)
    return KeyCurve(
        curve_id=points[0].curve_id,
        coeff_x=coeff_x,
        coeff_y=coeff_y,
        z_min=float(z.min()),
        z_max=float(z.max()),
        residual_var_x=var_x,
        residual_var_y=var_y,
        coeff_cov_x=cov_x,
        coeff_cov_y=cov_y,
        n_points=n,
    )


def fit_curve_set(points: list[KeyPoint], visit_id: str = "") -> CurveSet:
    """Group points by curve_id and fit each curve (order-independent)."""
    groups: dict[str, list[KeyPoint]] = {}
    for p in points:
        groups.setdefault(p.curve_id, []).append(p)
    curves = {cid: fit_curve(pts) for cid, pts in sorted(groups.items())}
    if not visit_id:
        visits = {p.visit_id for p in points if p.visit_id}
        visit_id = visits.pop() if len(visits) == 1 else ""
    return CurveSet(visit_id=visit_id, curves=curves)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def eval_curve(curve: KeyCurve, z):
    """Polynomial evaluation (Horner); z may be a scalar or array.

    Extrapolation outside [z_min, z_max] is allowed; see prediction_band
    for how confidence degrades there.
    """
    z = np.asarray(z, dtype=np.float64)
    a2, a1, a0 = curve.coeff_x
    b2, b1, b0 = curve.coeff_y
    x = (a2 * z + a1) * z + a0
    y = (b2 * z + b1) * z + b0
    if x.ndim == 0:
        return float(x), float(y)
    return x, y


def prediction_band(
    curve: KeyCurve,
    z,
    selection_sigma: tuple[float, float] = (SELECTION_SIGMA_X, SELECTION_SIGMA_Y),
):
    """1-sigma uncertainty of the curve position at z, per axis (mm).

    Regression variance v' C v + residual variance (v = (z^2, z, 1)), with
    the fixed point-selection uncertainty added in quadrature, so the band
    never drops below the annotator's click scatter and widens where the
    curve extrapolates.
    """
    z = np.asarray(z, dtype=np.float64)
    v = np.stack([z * z, z, np.ones_like(z)], axis=-1)
    var_x = np.einsum("...i,ij,...j->...", v, curve.coeff_cov_x, v) + curve.residual_var_x
    var_y = np.einsum("...i,ij,...j->...", v, curve.coeff_cov_y, v) + curve.residual_var_y
    sx = np.sqrt(np.maximum(var_x, 0.0) + selection_sigma[0] ** 2)
    sy = np.sqrt(np.maximum(var_y, 0.0) + selection_sigma[1] ** 2)
    if sx.ndim == 0:
        return float(sx), float(sy)
    return sx, sy


def overlap_span(a: KeyCurve, b: KeyCurve) -> tuple[float, float]:
    lo = max(a.z_min, b.z_min)
    hi = min(a.z_max, b.z_max)
    if not lo < hi:
        raise NoOverlap(
            f"curves {a.curve_id!r}/{b.curve_id!r}: spans [{a.z_min}, {a.z_max}] and "
            f"[{b.z_min}, {b.z_max}] do not overlap"
        )
    return lo, hi


def _metric_samples(lo: float, hi: float, n_samples: int) -> np.ndarray:
    """Midpoint-rule z samples: the mean then matches the continuum average
    of the distance to O(1/n^2), unlike endpoint-inclusive spacing."""
    return lo + (np.arange(n_samples) + 0.5) * (hi - lo) / n_samples


def _sample_distances(a: KeyCurve, b: KeyCurve, n_samples: int) -> np.ndarray:
    if n_samples < 2:
        raise ValueError(f"n_samples must be >= 2, got {n_samples}")
    lo, hi = overlap_span(a, b)
    zs = _metric_samples(lo, hi, n_samples)
    ax, ay = eval_curve(a, zs)
    bx, by = eval_curve(b, zs)
    return np.hypot(ax - bx, ay - by)


def curve_distance(a: KeyCurve, b: KeyCurve, n_samples: int = DEFAULT_METRIC_SAMPLES) -> float:
    """Mean 2D distance between two curves over their z overlap (mm)."""
    return float(_sample_distances(a, b, n_samples).mean())


@dataclass(frozen=True)
class ScoreReport:
    """Pooled RMSE plus the per-curve breakdown and skipped curve ids."""

    rmse_mm: float
    per_curve: dict[str, dict[str, float]]
    skipped: list[str]
    n_samples: int

    def to_json_dict(self) -> dict:
        return {
            "rmse_mm": self.rmse_mm,
            "per_curve": self.per_curve,
            "skipped": list(self.skipped),
            "n_samples": self.n_samples,
        }


def score_curve_sets(src: CurveSet, tgt: CurveSet, n_samples: int = DEFAULT_METRIC_SAMPLES) -> ScoreReport:
    """Pooled RMSE over all shared curves' samples, with reporting.

    Curves present in only one set (or sharing an id without z overlap) are
    skipped and listed in the report.
    """
    skipped = sorted(set(src.curves) ^ set(tgt.curves))
    sq_sum = 0.0
    n_total = 0
    per_curve: dict[str, dict[str, float]] = {}
    for cid in src.shared_ids(tgt):
        try:
            d = _sample_distances(src.curves[cid], tgt.curves[cid], n_samples)
        except NoOverlap:
            skipped.append(cid)
            continue
        per_curve[cid] = {
            "mean_distance_mm": float(d.mean()),
            "rmse_mm": float(np.sqrt(np.mean(d * d))),
        }
        sq_sum += float(d @ d)
        n_total += len(d)
    if n_total == 0:
        raise NoSharedCurves(
            f"no shared curve ids with z overlap between visits "
            f"{src.visit_id!r} and {tgt.visit_id!r}"
        )
    return ScoreReport(
        rmse_mm=float(np.sqrt(sq_sum / n_total)),
        per_curve=per_curve,
        skipped=sorted(skipped),
        n_samples=n_samples,
    )


def rmse(src: CurveSet, tgt: CurveSet, n_samples: int = DEFAULT_METRIC_SAMPLES) -> float:
    """Square root of the mean squared 2D distance, pooled over all shared
    curves' z samples."""
    return score_curve_sets(src, tgt, n_samples).rmse_mm


def transform_points(points: list[KeyPoint], t) -> list[KeyPoint]:
    """Apply a 3D transform (anything with apply_points) to annotations.

    The caller refits with fit_curve: a transformed structure is a new set
    of annotations in the target frame, not a reparameterized polynomial.
    """
    if not points:
        return []
    arr = np.array([[p.x, p.y, p.z] for p in points], dtype=np.float64)
    moved = t.apply_points(arr)
    return [
        KeyPoint(
            curve_id=p.curve_id,
            z=float(m[2]),
            x=float(m[0]),
            y=float(m[1]),
            visit_id=p.visit_id,
            source_slice_index=p.source_slice_index,
        )
        for p, m in zip(points, moved)
    ]


# ---------------------------------------------------------------------------
# JSON annotation / curve files
# ---------------------------------------------------------------------------

def points_to_json_dict(points: list[KeyPoint], visit_id: str = "") -> dict:
    if not visit_id:
        visits = {p.visit_id for p in points if p.visit_id}
        visit_id = visits.pop() if len(visits) == 1 else ""
    return {
        "visit_id": visit_id,
        "points": [
            {
                "curve_id": p.curve_id,
                "z_mm": p.z,
                "x_mm": p.x,
                "y_mm": p.y,
                "slice": p.source_slice_index,
            }
            for p in points
        ],
    }


def points_from_json_dict(doc: dict) -> list[KeyPoint]:
    visit = str(doc.get("visit_id", ""))
    points = []
    for rec in doc["points"]:
        points.append(
            KeyPoint(
                curve_id=str(rec["curve_id"]),
                z=float(rec["z_mm"]),
                x=float(rec["x_mm"]),
                y=float(rec["y_mm"]),
                visit_id=visit,
                source_slice_index=None if rec.get("slice") is None else int(rec["slice"]),
            )
        )
    return points


def save_points(points: list[KeyPoint], path: str | Path, visit_id: str = "") -> None:
    Path(path).write_text(
        json.dumps(points_to_json_dict(points, visit_id), indent=2) + "\n", encoding="utf-8"
    )


def load_points(path: str | Path) -> list[KeyPoint]:
    return points_from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def curve_to_json_dict(curve: KeyCurve) -> dict:
    return {
        "coeff_x": list(curve.coeff_x),
        "coeff_y": list(curve.coeff_y),
        "z_min_mm": curve.z_min,
        "z_max_mm": curve.z_max,
        "residual_var_x": curve.residual_var_x,
        "residual_var_y": curve.residual_var_y,
        "coeff_cov_x": curve.coeff_cov_x.tolist(),
        "coeff_cov_y": curve.coeff_cov_y.tolist(),
        "n_points": curve.n_points,
    }


def curve_from_json_dict(curve_id: str, doc: dict) -> KeyCurve:
    return KeyCurve(
        curve_id=curve_id,
        coeff_x=tuple(doc["coeff_x"]),
        coeff_y=tuple(doc["coeff_y"]),
        z_min=float(doc["z_min_mm"]),
        z_max=float(doc["z_max_mm"]),
        residual_var_x=float(doc["residual_var_x"]),
        residual_var_y=float(doc["residual_var_y"]),
        coeff_cov_x=np.asarray(doc["coeff_cov_x"], dtype=np.float64),
        coeff_cov_y=np.asarray(doc["coeff_cov_y"], dtype=np.float64),
        n_points=int(doc["n_points"]),
    )


def curve_set_to_json_dict(cs: CurveSet) -> dict:
    return {
        "visit_id": cs.visit_id,
        "curves": {cid: curve_to_json_dict(c) for cid, c in sorted(cs.curves.items())},
    }


def curve_set_from_json_dict(doc: dict) -> CurveSet:
    return CurveSet(
        visit_id=str(doc.get("visit_id", "")),
        curves={cid: curve_from_json_dict(cid, c) for cid, c in doc["curves"].items()},
    )


def save_curve_set(cs: CurveSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(curve_set_to_json_dict(cs), indent=2) + "\n", encoding="utf-8")


def load_curve_set(path: str | Path) -> CurveSet:
    return curve_set_from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def sample_curve_points(curve: KeyCurve, n: int = 16, visit_id: str = "") -> list[KeyPoint]:
    """Noiseless annotations on the curve at n uniform z in its span."""
    zs = np.linspace(curve.z_min, curve.z_max, max(3, n))
    xs, ys = eval_curve(curve, zs)
    return [
        KeyPoint(curve_id=curve.curve_id, z=float(z), x=float(x), y=float(y), visit_id=visit_id)
        for z, x, y in zip(zs, xs, ys)
    ]
