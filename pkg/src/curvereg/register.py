"""Two-stage registration: affine then TPS, driven by feature similarity.

The objective compares multi-scale features of the warped source against
the target: ``w_sim * (1 - mean co-located cosine) + w_lcka * (1 - LCKA)``.
Both stages minimize it derivative-free (the transform families are low
dimensional and the metric is non-differentiable): the affine stage runs a
seeded-restart Nelder-Mead simplex over 12 parameters on a coarse working
grid and refines the best restart on a finer one; the TPS stage does
coordinate descent over lattice control displacements composed after the
fixed affine, accepting a move only when the objective strictly decreases.

When validation curve sets are supplied, the key-curve RMSE is checked
after the affine stage and after each TPS sweep; once it worsens for more
than `patience` consecutive checks the run halts and rolls back to the
best-scoring state (the identity state is checkpoint zero, so validation
can never make a result worse than no registration).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from .errors import InverseNonConvergent, NumericalError, OptimizerBudgetExceeded
from .features import FeatureConfig, FeatureMap, diag_cosine, extract_features, lcka
from .keycurve import (
    CurveSet,
    ScoreReport,
    fit_curve_set,
    sample_curve_points,
    score_curve_sets,
    transform_points,
)
from .transforms import (
    Affine3,
    CompositeTransform,
    Tps3,
    TpsSolver,
    affine_to_json_dict,
    control_lattice,
    tps_to_json_dict,
)
from .volume import (
    CHANNEL_PET,
    CHANNEL_PET_PREPROCESSED,
    VoxelGrid,
    preprocess_pet,
    resample,
    working_geometry,
)
from . import _kernels

#: Curve samples taken when turning a validation CurveSet into points.
VALIDATION_SAMPLES_PER_CURVE = 16


@dataclass(frozen=True)
class LevelConfig:
    """Feature resolution for one optimization level."""

    working_spacing_mm: float | None
    scales_mm: tuple[float, ...]
    cell_mm: float


@dataclass(frozen=True)
class AffineStageConfig:
    simplex_scale: float = 1.0
    max_evaluations: int = 2000
    restarts: int = 5
    seed: int = 0


@dataclass(frozen=True)
class TpsStageConfig:
    """Coordinate-descent settings for the TPS stage.

    Candidate moves are scored at `level` resolution with a fast inverse
    (undamped fixed point at `inverse_tol_mm`); the final state must beat
    the plain affine under the exact warp or the stage returns the identity
    spline, so stage monotonicity holds at full fidelity.
    """

    grid: tuple[int, int, int] = (4, 4, 4)
    lam: float = 0.0
    step_mm: float = 4.0
    max_sweeps: int = 3
    step_shrink: float = 0.5
    level: LevelConfig = LevelConfig(10.0, (10.0, 20.0), 20.0)
    inverse_damping: float = 1.0
    inverse_tol_mm: float = 0.25
    inverse_max_iter: int = 10


@dataclass(frozen=True)
class RegistrationConfig:
    """Everything the two stages need; defaults target desk-scale runtimes."""

    features: FeatureConfig = field(default_factory=FeatureConfig)
    w_sim: float = 1.0
    w_lcka: float = 0.25
    coarse: LevelConfig = LevelConfig(14.0, (14.0, 28.0), 28.0)
    fine: LevelConfig = LevelConfig(7.0, (7.0, 14.0), 14.0)
    affine: AffineStageConfig = field(default_factory=AffineStageConfig)
    tps: TpsStageConfig = field(default_factory=TpsStageConfig)
    patience: int = 1
    metric_samples: int = 64

    def __post_init__(self):
        if self.w_sim < 0 or self.w_lcka < 0:
            raise ValueError("objective weights must be nonnegative")


@dataclass(frozen=True)
class RegistrationResult:
    affine: Affine3
    tps: Tps3 | None
    objective_trace: tuple[float, ...]
    keycurve_trace: tuple[dict, ...]
    stopped_early: bool
    wall_time_s: float

    @property
    def transform(self):
        if self.tps is None:
            return self.affine
        return CompositeTransform((self.affine, self.tps))

    def to_json_dict(self) -> dict:
        return {
            "affine": affine_to_json_dict(self.affine),
            "tps": None if self.tps is None else tps_to_json_dict(self.tps),
            "objective_trace": list(self.objective_trace),
            "keycurve_trace": [dict(e) for e in self.keycurve_trace],
            "stopped_early": self.stopped_early,
            "wall_time_s": self.wall_time_s,
        }


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------

class ObjectiveContext:
    """Caches target features and sampling coordinates for one level."""

    def __init__(self, src: VoxelGrid, tgt: VoxelGrid, features: FeatureConfig,
                 working_spacing_mm: float | None, w_sim: float, w_lcka: float):
        self.src = src
        self.features = features
        self.w_sim = float(w_sim)
        self.w_lcka = float(w_lcka)
        if working_spacing_mm is None:
            self.geometry = tgt.geometry
            tgt_level = tgt
        else:
            self.geometry = working_geometry(tgt.geometry, working_spacing_mm)
            tgt_level = resample(tgt, self.geometry, features.channels)
        self.f_tgt = extract_features(
            tgt_level, features.scales_mm, features.cell_mm, features.channels
        )
        self._centers = self.geometry.voxel_centers()
        self._src_data = [src.channel_data(c) for c in features.channels]
        self._src_fill = [src.channel_fill(c) for c in features.channels]

    def warp_features(self, t) -> FeatureMap:
        voxels = self.src.world_to_voxel(t.inverse_points(self._centers))
        arrays = tuple(
            _kernels.trilinear_gather(d, voxels, f).astype(np.float32)
            for d, f in zip(self._src_data, self._src_fill)
        )
        warped = VoxelGrid(
            geometry=self.geometry,
            channels=self.features.channels,
            data=arrays,
            fill_values=tuple(self._src_fill),
        )
        return extract_features(
            warped, self.features.scales_mm, self.features.cell_mm, self.features.channels
        )

    def value(self, t) -> float:
        return combine_objective(self.warp_features(t), self.f_tgt, self.w_sim, self.w_lcka)


def combine_objective(f_src: FeatureMap, f_tgt: FeatureMap, w_sim: float, w_lcka: float) -> float:
    """w_sim * (1 - mean co-located cosine) + w_lcka * (1 - LCKA)."""
    total = 0.0
    if w_sim:
        total += w_sim * (1.0 - diag_cosine(f_src, f_tgt))
    if w_lcka:
        total += w_lcka * (1.0 - lcka(f_src, f_tgt))
    return float(total)


def _level_context(src, tgt, cfg: RegistrationConfig, level: LevelConfig) -> ObjectiveContext:
    features = FeatureConfig(
        channels=cfg.features.channels,
        scales_mm=level.scales_mm,
        cell_mm=level.cell_mm,
    )
    return ObjectiveContext(src, tgt, features, level.working_spacing_mm, cfg.w_sim, cfg.w_lcka)


def objective(src: VoxelGrid, tgt: VoxelGrid, t, cfg: RegistrationConfig) -> float:
    """Alignment cost of transform `t` between two preprocessed grids.

    ``w_sim * (1 - mean co-located feature cosine) + w_lcka * (1 - LCKA)``
    with features extracted from the backward-warped source on the target's
    grid. 0 for a perfectly aligned pair, larger is worse.
    """
    ctx = ObjectiveContext(src, tgt, cfg.features, None, cfg.w_sim, cfg.w_lcka)
    return ctx.value(t)


# ---------------------------------------------------------------------------
# Affine stage
# ---------------------------------------------------------------------------

_N_AFFINE_PARAMS = 12

# Per-parameter simplex steps in natural units:
# rotations (deg), log scales, shears, translations (mm).
_AFFINE_STEPS = np.array([2.0] * 3 + [0.03] * 3 + [0.02] * 3 + [6.0] * 3)


def params_to_affine(params: np.ndarray, center: np.ndarray) -> Affine3:
    """12 parameters -> Affine3, rotating/scaling/shearing about `center`."""
    angles = np.deg2rad(params[0:3])
    cx, sx = np.cos(angles[0]), np.sin(angles[0])
    cy, sy = np.cos(angles[1]), np.sin(angles[1])
    cz, sz = np.cos(angles[2]), np.sin(angles[2])
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    scale = np.diag(np.exp(params[3:6]))
    shear = np.array([[1.0, params[6], params[7]], [0.0, 1.0, params[8]], [0.0, 0.0, 1.0]])
    linear = rz @ ry @ rx @ scale @ shear
    translation = center - linear @ center + params[9:12]
    return Affine3(linear, translation)


class _TracingObjective:
    """Wraps a context: traces every evaluation, turns errors into +inf."""

    def __init__(self, ctx: ObjectiveContext, to_transform: Callable, trace: list):
        self.ctx = ctx
        self.to_transform = to_transform
        self.trace = trace
        self.n_ok = 0

    def __call__(self, params: np.ndarray) -> float:
        try:
            value = self.ctx.value(self.to_transform(params))
            self.n_ok += 1
        except NumericalError:
            value = float("inf")
        self.trace.append(value)
        return value


def _simplex_around(x0: np.ndarray, steps: np.ndarray) -> np.ndarray:
    simplex = np.tile(x0, (len(x0) + 1, 1))
    for i in range(len(x0)):
        simplex[i + 1, i] += steps[i]
    return simplex


def _nelder_mead(fun, x0, steps, maxfev, xatol, fatol):
    return scipy.optimize.minimize(
        fun,
        x0,
        method="Nelder-Mead",
        options={
            "initial_simplex": _simplex_around(np.asarray(x0, dtype=np.float64), steps),
            "maxfev": int(maxfev),
            "xatol": xatol,
            "fatol": fatol,
            "adaptive": True,
        },
    )


def register_affine(src: VoxelGrid, tgt: VoxelGrid, cfg: RegistrationConfig
                    ) -> tuple[Affine3, list[float]]:
    """Minimize the objective over 12 affine parameters.

    Seeded Nelder-Mead restarts explore on the coarse level (restart zero
    starts at the identity); the best restart is refined on the fine level.
    Deterministic given the seed. Raises OptimizerBudgetExceeded only when
    not a single evaluation succeeded.
    """
    ctx_coarse = _level_context(src, tgt, cfg, cfg.coarse)
    ctx_fine = _level_context(src, tgt, cfg, cfg.fine)
    lo, hi = tgt.geometry.bounds()
    center = 0.5 * (lo + hi)
    to_affine = lambda p: params_to_affine(p, center)

    trace: list[float] = []
    steps = _AFFINE_STEPS * cfg.affine.simplex_scale
    rng = np.random.default_rng(cfg.affine.seed)
    starts = [np.zeros(_N_AFFINE_PARAMS)]
    for _ in range(max(0, cfg.affine.restarts - 1)):
        starts.append(rng.uniform(-1.5, 1.5, _N_AFFINE_PARAMS) * steps)

    n_ok = 0
    best_x, best_f = None, np.inf
    if cfg.affine.max_evaluations >= 1:
        coarse_fun = _TracingObjective(ctx_coarse, to_affine, trace)
        for x0 in starts:
            res = _nelder_mead(coarse_fun, x0, steps, cfg.affine.max_evaluations,
                               xatol=0.5, fatol=1e-5)
            if res.fun < best_f:
                best_x, best_f = np.asarray(res.x), float(res.fun)
        n_ok += coarse_fun.n_ok
        if best_x is None:
            best_x = np.zeros(_N_AFFINE_PARAMS)

        fine_fun = _TracingObjective(ctx_fine, to_affine, trace)
        res = _nelder_mead(fine_fun, best_x, steps * 0.3, cfg.affine.max_evaluations,
                           xatol=0.1, fatol=1e-6)
        n_ok += fine_fun.n_ok
        # The fine-level identity value guards against a coarse-level
        # minimum that does not survive refinement.
        f_ident = fine_fun(np.zeros(_N_AFFINE_PARAMS))
        if res.fun <= f_ident:
            best_x = np.asarray(res.x)
        else:
            best_x = np.zeros(_N_AFFINE_PARAMS)

    if n_ok == 0:
        raise OptimizerBudgetExceeded(
            f"no successful objective evaluation within budget "
            f"{cfg.affine.max_evaluations} x {cfg.affine.restarts} restarts"
        )
    return to_affine(best_x), trace


# ---------------------------------------------------------------------------
# TPS stage
# ---------------------------------------------------------------------------

class _StagePaceTps:
    """A Tps3 with the stage-time (fast) fixed-point inverse settings."""

    def __init__(self, tps: Tps3, damping: float, tol_mm: float, max_iter: int):
        self.tps = tps
        self.damping = damping
        self.tol_mm = tol_mm
        self.max_iter = max_iter

    def apply_points(self, points):
        return self.tps.apply_points(points)

    def inverse_points(self, targets):
        coords, n_fail = _kernels.tps_inverse_many(
            targets, self.tps.control_points, self.tps.weights,
            self.tps.affine_part.linear, self.tps.affine_part.translation,
            self.damping, self.tol_mm, self.max_iter,
        )
        if n_fail:
            raise InverseNonConvergent(f"stage-time TPS inverse: {n_fail} points diverged")
        return coords


def register_tps(
    src: VoxelGrid,
    tgt: VoxelGrid,
    affine_init: Affine3,
    cfg: RegistrationConfig,
    on_sweep: Callable[[int, Tps3, float], bool] | None = None,
) -> tuple[Tps3, list[float]]:
    """Coordinate descent over lattice control displacements after `affine_init`.

    Each control/axis tries +step then -step (step shrinking per sweep); a
    move is kept only if the objective strictly decreases; a trial whose
    warp inverse diverges counts as rejected. The affine part is never
    re-optimized. `on_sweep(i, tps, objective)` may return False to halt
    after a sweep (used for validation-based early stopping). The returned
    spline beats `affine_init` alone under the exact warp, else it is the
    identity spline.
    """
    ctx = _level_context(src, tgt, cfg, cfg.tps.level)
    controls = control_lattice(tgt.geometry.bounds(), cfg.tps.grid)
    solver = TpsSolver(controls, cfg.tps.lam)
    disp = np.zeros_like(controls)

    def fit_tps(d: np.ndarray) -> Tps3:
        return solver.fit(controls + d)

    def value(d: np.ndarray) -> float:
        paced = _StagePaceTps(
            fit_tps(d), cfg.tps.inverse_damping, cfg.tps.inverse_tol_mm,
            cfg.tps.inverse_max_iter,
        )
        try:
            return ctx.value(CompositeTransform((affine_init, paced)))
        except NumericalError:
            return float("inf")

    trace: list[float] = []
    current = value(disp)
    trace.append(current)

    n_controls = len(controls)
    for sweep in range(cfg.tps.max_sweeps):
        step = cfg.tps.step_mm * (cfg.tps.step_shrink ** sweep)
        for i in range(n_controls):
            for axis in range(3):
                for sign in (1.0, -1.0):
                    disp[i, axis] += sign * step
                    candidate = value(disp)
                    trace.append(candidate)
                    if candidate < current:
                        current = candidate
                        break
                    disp[i, axis] -= sign * step
        if on_sweep is not None and not on_sweep(sweep, fit_tps(disp), current):
            break

    # Exactness guard: accept the stage result only if it improves on the
    # plain affine under the production warp (full-fidelity inverse, fine level).
    if np.any(disp):
        ctx_exact = _level_context(src, tgt, cfg, cfg.fine)
        f_affine = ctx_exact.value(affine_init)
        f_final = ctx_exact.value(CompositeTransform((affine_init, fit_tps(disp))))
        trace.extend([f_affine, f_final])
        if not f_final < f_affine:
            disp = np.zeros_like(controls)
    return fit_tps(disp), trace


# ---------------------------------------------------------------------------
# Full pipeline with validation-based early stopping
# ---------------------------------------------------------------------------

def _ensure_preprocessed(grid: VoxelGrid, channels: tuple[str, ...]) -> VoxelGrid:
    if CHANNEL_PET_PREPROCESSED in channels and not grid.has_channel(CHANNEL_PET_PREPROCESSED):
        if grid.has_channel(CHANNEL_PET):
            return preprocess_pet(grid)
    return grid


def validation_rmse(val_src: CurveSet, val_tgt: CurveSet, t, n_samples: int) -> float:
    """Key-curve RMSE of the validation sets under transform `t`.

    Source curves are sampled, transformed and refit; identity reproduces
    the plain src-vs-tgt RMSE.
    """
    points = []
    for cid in sorted(val_src.curves):
        points.extend(sample_curve_points(val_src.curves[cid], VALIDATION_SAMPLES_PER_CURVE))
    moved = transform_points(points, t) if t is not None else points
    return score_curve_sets(fit_curve_set(moved, val_src.visit_id), val_tgt, n_samples).rmse_mm


def register(
    src: VoxelGrid,
    tgt: VoxelGrid,
    cfg: RegistrationConfig | None = None,
    val_src: CurveSet | None = None,
    val_tgt: CurveSet | None = None,
    progress: Callable[[float, str], None] | None = None,
) -> RegistrationResult:
    """Full pipeline: preprocess, affine stage, TPS stage, early stopping.

    With validation curve sets, the key-curve RMSE is checkpointed at the
    identity, after the affine stage and after every TPS sweep; the run
    halts once the metric has worsened for more than `cfg.patience`
    consecutive checks and the best-scoring state is returned (rollback).
    """
    cfg = cfg or RegistrationConfig()
    t_start = time.perf_counter()
    channels = cfg.features.channels
    src = _ensure_preprocessed(src, channels)
    tgt = _ensure_preprocessed(tgt, channels)
    validate = val_src is not None and val_tgt is not None

    def report(frac: float, stage: str):
        if progress is not None:
            progress(frac, stage)

    keycurve_trace: list[dict] = []
    best = {"affine": Affine3.identity(), "tps": None, "rmse": np.inf, "label": "identity"}
    worse_streak = 0
    stopped_early = False

    def check(label: str, affine: Affine3, tps: Tps3 | None) -> bool:
        """Record a checkpoint; returns False when patience is exhausted."""
        nonlocal worse_streak, stopped_early
        if not validate:
            return True
        t = CompositeTransform((affine, tps)) if tps is not None else affine
        value = validation_rmse(val_src, val_tgt, t, cfg.metric_samples)
        keycurve_trace.append({"label": label, "rmse_mm": value})
        if value < best["rmse"]:
            best.update(affine=affine, tps=tps, rmse=value, label=label)
            worse_streak = 0
            return True
        worse_streak += 1
        if worse_streak > cfg.patience:
            stopped_early = True
            return False
        return True

    report(0.0, "preprocess")
    check("identity", Affine3.identity(), None)

    report(0.1, "affine")
    affine, trace = register_affine(src, tgt, cfg)
    objective_trace = list(trace)
    go_on = check("affine", affine, None)

    tps = None
    if go_on and cfg.tps.max_sweeps > 0:
        report(0.5, "tps")

        def on_sweep(i: int, sweep_tps: Tps3, _obj: float) -> bool:
            report(0.5 + 0.4 * (i + 1) / cfg.tps.max_sweeps, f"tps_sweep_{i}")
            return check(f"tps_sweep_{i}", affine, sweep_tps)

        tps, tps_trace = register_tps(src, tgt, affine, cfg, on_sweep=on_sweep)
        objective_trace.extend(tps_trace)

    # Final state: with validation, roll back to the best checkpoint.
    if validate:
        final_affine, final_tps = best["affine"], best["tps"]
    else:
        final_affine, final_tps = affine, tps

    final_t = (
        CompositeTransform((final_affine, final_tps)) if final_tps is not None else final_affine
    )
    ctx_fine = _level_context(src, tgt, cfg, cfg.fine)
    initial_obj = ctx_fine.value(Affine3.identity())
    final_obj = ctx_fine.value(final_t)
    objective_trace = [initial_obj] + objective_trace + [final_obj]

    report(1.0, "done")
    return RegistrationResult(
        affine=final_affine,
        tps=final_tps,
        objective_trace=tuple(objective_trace),
        keycurve_trace=tuple(keycurve_trace),
        stopped_early=stopped_early,
        wall_time_s=time.perf_counter() - t_start,
    )


# ---------------------------------------------------------------------------
# Evaluation against annotations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EvaluationReport:
    """Key-curve RMSE of a transform against paired annotations."""

    aligned_rmse_mm: float
    unaligned_rmse_mm: float
    per_curve: dict[str, dict[str, float]]
    skipped: list[str]
    n_samples: int

    def to_json_dict(self) -> dict:
        return {
            "aligned_rmse_mm": self.aligned_rmse_mm,
            "unaligned_rmse_mm": self.unaligned_rmse_mm,
            "per_curve": self.per_curve,
            "skipped": list(self.skipped),
            "n_samples": self.n_samples,
        }


def registration_config_from_dict(doc: dict) -> RegistrationConfig:
    """Build a RegistrationConfig from its JSON form (CLI --config, service
    register body); absent keys keep their defaults."""
    from .features import FeatureConfig

    def level(d: dict) -> LevelConfig:
        d = dict(d)
        d["scales_mm"] = tuple(d["scales_mm"])
        return LevelConfig(**d)

    kwargs: dict = {}
    if "features" in doc:
        kwargs["features"] = FeatureConfig(
            **{k: tuple(v) if isinstance(v, list) else v for k, v in doc["features"].items()}
        )
    for key in ("w_sim", "w_lcka", "patience", "metric_samples"):
        if key in doc:
            kwargs[key] = doc[key]
    for key in ("coarse", "fine"):
        if key in doc:
            kwargs[key] = level(doc[key])
    if "affine" in doc:
        kwargs["affine"] = AffineStageConfig(**doc["affine"])
    if "tps" in doc:
        d = dict(doc["tps"])
        if "grid" in d:
            d["grid"] = tuple(d["grid"])
        if "level" in d:
            d["level"] = level(d["level"])
        kwargs["tps"] = TpsStageConfig(**d)
    return RegistrationConfig(**kwargs)


def evaluate(src_points, tgt_points, t=None, n_samples: int = 64) -> EvaluationReport:
    """Transform source annotations, refit both sides, report pooled RMSE.

    The unaligned baseline (no transform) is always included and does not
    depend on `t`.
    """
    tgt_cs = fit_curve_set(tgt_points)
    src_cs = fit_curve_set(src_points)
    baseline: ScoreReport = score_curve_sets(src_cs, tgt_cs, n_samples)
    if t is None:
        aligned = baseline
    else:
        moved_cs = fit_curve_set(transform_points(src_points, t))
        aligned = score_curve_sets(moved_cs, tgt_cs, n_samples)
    return EvaluationReport(
        aligned_rmse_mm=aligned.rmse_mm,
        unaligned_rmse_mm=baseline.rmse_mm,
        per_curve=aligned.per_curve,
        skipped=aligned.skipped,
        n_samples=n_samples,
    )
