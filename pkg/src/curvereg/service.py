"""HTTP backend for the annotation UI.

Serves slice/overlay images, stores annotation files, fits curves with
uncertainty bands, scores visit pairs and runs registration jobs on a
bounded worker pool. Persistence is plain files under one data directory:
``*.vmeta`` volumes, ``annotations/<visit>.json``, ``results/<job>.json``.
Every numeric value returned over the API is the corresponding library
call's output; the service adds no computation of its own.
"""

from __future__ import annotations

import io
import json
import os
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import HTTPException, RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image

from .errors import CurveRegError
from .keycurve import (
    curve_set_to_json_dict,
    eval_curve,
    fit_curve_set,
    points_from_json_dict,
    prediction_band,
    score_curve_sets,
    transform_points,
)
from .register import RegistrationConfig, register, registration_config_from_dict
from .transforms import transform_from_json_dict, warp_volume
from .volume import (
    CHANNEL_CT,
    CHANNEL_PET,
    VoxelGrid,
    extract_slice,
    load_volume,
    save_volume,
    worker_count,
)

_BAND_SAMPLES = 41
_BAND_EXTRAPOLATION = 0.25  # fraction of the fitted span shown beyond each end

_DEFAULT_WINDOWS = {CHANNEL_CT: (-1000.0, 1000.0)}


def _window_for(grid: VoxelGrid, channel: str) -> tuple[float, float]:
    if channel in _DEFAULT_WINDOWS:
        return _DEFAULT_WINDOWS[channel]
    data = grid.channel_data(channel)
    return float(data.min()), float(data.max())


def _to_uint8(values: np.ndarray, window: tuple[float, float]) -> np.ndarray:
    lo, hi = window
    if hi <= lo:
        hi = lo + 1.0
    scaled = (values.astype(np.float64) - lo) / (hi - lo)
    return (np.clip(scaled, 0.0, 1.0) * 255.0).round().astype(np.uint8)


def _hot_rgb(norm: np.ndarray) -> np.ndarray:
    """Small hot-iron colormap: black -> red -> yellow -> white."""
    r = np.clip(3.0 * norm, 0.0, 1.0)
    g = np.clip(3.0 * norm - 1.0, 0.0, 1.0)
    b = np.clip(3.0 * norm - 2.0, 0.0, 1.0)
    return np.stack([r, g, b], axis=-1)


def _png_response(img: np.ndarray) -> Response:
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


class JobRegistry:
    """Registration jobs on a bounded pool; one running job per session."""

    def __init__(self, max_workers: int):
        self._pool = ThreadPoolExecutor(max_workers=max_workers)
        self._lock = threading.Lock()
        self._jobs: dict[str, dict] = {}
        self._session_job: dict[str, str] = {}

    def submit(self, session: str, fn) -> str:
        with self._lock:
            running = self._session_job.get(session)
            if running is not None and self._jobs[running]["state"] in ("queued", "running"):
                raise HTTPException(
                    status_code=409,
                    detail={"error": "JobRunning", "message": f"session {session} busy", "job_id": running},
                )
            job_id = uuid.uuid4().hex[:12]
            self._jobs[job_id] = {
                "job_id": job_id,
                "state": "queued",
                "progress": 0.0,
                "result": None,
                "error": None,
            }
            self._session_job[session] = job_id
        self._pool.submit(self._run, job_id, fn)
        return job_id

    def _run(self, job_id: str, fn) -> None:
        self.update(job_id, state="running")
        try:
            result = fn(lambda frac, stage: self.update(job_id, progress=frac))
            self.update(job_id, state="done", progress=1.0, result=result)
        except Exception as e:
            self.update(job_id, state="failed", error=f"{type(e).__name__}: {e}")

    def update(self, job_id: str, **fields) -> None:
        with self._lock:
            self._jobs[job_id].update(fields)

    def status(self, job_id: str) -> dict:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise HTTPException(status_code=404, detail={"error": "NotFound", "message": f"no job {job_id}"})
            return dict(job)


def create_app(root: str | Path, registration_config: RegistrationConfig | None = None) -> FastAPI:
    """Build the service app for one data directory."""
    root = Path(root)
    annotations_dir = root / "annotations"
    results_dir = root / "results"
    annotations_dir.mkdir(parents=True, exist_ok=True)
    results_dir.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="curvereg service")
    volumes: dict[str, VoxelGrid] = {}
    volumes_lock = threading.Lock()
    annotation_locks: dict[str, threading.Lock] = {}
    annotation_locks_guard = threading.Lock()
    jobs = JobRegistry(max_workers=worker_count())
    reg_config = registration_config or RegistrationConfig()

    def volume_ids() -> list[str]:
        return sorted(p.stem for p in root.glob("*.vmeta"))

    def get_volume(vid: str) -> VoxelGrid:
        with volumes_lock:
            if vid in volumes:
                return volumes[vid]
        path = root / f"{vid}.vmeta"
        if not path.exists():
            raise HTTPException(status_code=404, detail={"error": "NotFound", "message": f"no volume {vid}"})
        grid = load_volume(path)
        with volumes_lock:
            volumes[vid] = grid
        return grid

    def annotation_path(visit: str) -> Path:
        safe = "".join(c for c in visit if c.isalnum() or c in "-_.")
        if not safe or safe != visit:
            raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"bad visit id {visit!r}"})
        return annotations_dir / f"{visit}.json"

    def annotation_lock(visit: str) -> threading.Lock:
        with annotation_locks_guard:
            return annotation_locks.setdefault(visit, threading.Lock())

    def load_annotation_doc(visit: str) -> dict:
        path = annotation_path(visit)
        if not path.exists():
            raise HTTPException(status_code=404, detail={"error": "NotFound", "message": f"no annotations for {visit}"})
        return json.loads(path.read_text(encoding="utf-8"))

    async def json_body(request: Request) -> dict:
        try:
            doc = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": "body is not valid JSON"})
        if not isinstance(doc, dict):
            raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": "body must be a JSON object"})
        return doc

    @app.exception_handler(CurveRegError)
    async def domain_error(request: Request, exc: CurveRegError):
        return JSONResponse(status_code=422, content={"error": exc.name, "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "BadRequest", "message": str(exc)})

    # -- volumes ---------------------------------------------------------

    @app.get("/volumes")
    def list_volumes() -> list[dict]:
        out = []
        for vid in volume_ids():
            grid = get_volume(vid)
            out.append(
                {
                    "id": vid,
                    "dims": list(grid.dims),
                    "spacing_mm": list(grid.spacing),
                    "origin_mm": list(grid.origin),
                    "channels": list(grid.channels),
                }
            )
        return out

    @app.get("/volumes/{vid}/slice")
    def volume_slice(vid: str, channel: str = CHANNEL_CT, z: int = 0, window: str = ""):
        grid = get_volume(vid)
        nz = grid.dims[2]
        if not 0 <= z < nz:
            raise HTTPException(status_code=404, detail={"error": "NotFound", "message": f"slice {z} outside [0, {nz})"})
        win = _window_for(grid, channel)
        if window:
            try:
                lo, hi = (float(t) for t in window.split(","))
                win = (lo, hi)
            except ValueError:
                raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"bad window {window!r}"})
        sl = extract_slice(grid, channel, z, win)
        return _png_response(_to_uint8(sl.values, sl.window))

    @app.get("/volumes/{vid}/overlay")
    def volume_overlay(vid: str, z: int = 0, alpha: float = 0.5):
        grid = get_volume(vid)
        nz = grid.dims[2]
        if not 0 <= z < nz:
            raise HTTPException(status_code=404, detail={"error": "NotFound", "message": f"slice {z} outside [0, {nz})"})
        alpha = float(np.clip(alpha, 0.0, 1.0))
        ct = extract_slice(grid, CHANNEL_CT, z, _window_for(grid, CHANNEL_CT))
        pet = extract_slice(grid, CHANNEL_PET, z, _window_for(grid, CHANNEL_PET))
        ct_gray = _to_uint8(ct.values, ct.window).astype(np.float64) / 255.0
        lo, hi = pet.window
        pet_norm = np.clip((pet.values.astype(np.float64) - lo) / max(hi - lo, 1e-12), 0.0, 1.0)
        rgb = (1.0 - alpha) * ct_gray[..., None] + alpha * _hot_rgb(pet_norm)
        return _png_response((np.clip(rgb, 0.0, 1.0) * 255.0).round().astype(np.uint8))

    # -- annotations -------------------------------------------------------

    @app.get("/annotations/{visit}")
    def get_annotations(visit: str) -> dict:
        with annotation_lock(visit):
            return load_annotation_doc(visit)

    @app.put("/annotations/{visit}")
    async def put_annotations(visit: str, request: Request) -> dict:
        doc = await json_body(request)
        try:
            points = points_from_json_dict(doc)
        except (KeyError, TypeError, ValueError) as e:
            raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"bad annotation document: {e}"})
        path = annotation_path(visit)
        payload = json.dumps(doc, indent=2) + "\n"
        with annotation_lock(visit):
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(payload, encoding="utf-8")
            os.replace(tmp, path)
        return {"visit_id": visit, "n_points": len(points)}

    # -- fitting and scoring ------------------------------------------------

    @app.post("/fit")
    async def fit_visit(request: Request) -> dict:
        doc = await json_body(request)
        if "visit" not in doc:
            raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": "missing 'visit'"})
        points = points_from_json_dict(load_annotation_doc(str(doc["visit"])))
        curves = fit_curve_set(points)
        out = curve_set_to_json_dict(curves)
        bands: dict[str, list[dict]] = {}
        for cid, curve in sorted(curves.curves.items()):
            span = curve.z_max - curve.z_min
            zs = np.linspace(
                curve.z_min - _BAND_EXTRAPOLATION * span,
                curve.z_max + _BAND_EXTRAPOLATION * span,
                _BAND_SAMPLES,
            )
            xs, ys = eval_curve(curve, zs)
            sx, sy = prediction_band(curve, zs)
            bands[cid] = [
                {
                    "z_mm": float(z),
                    "x_mm": float(x),
                    "y_mm": float(y),
                    "sigma_x_mm": float(bx),
                    "sigma_y_mm": float(by),
                }
                for z, x, y, bx, by in zip(zs, xs, ys, sx, sy)
            ]
        out["bands"] = bands
        return out

    @app.post("/score")
    async def score_visits(request: Request) -> dict:
        doc = await json_body(request)
        for key in ("src", "tgt"):
            if key not in doc:
                raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"missing {key!r}"})
        src_points = points_from_json_dict(load_annotation_doc(str(doc["src"])))
        tgt_points = points_from_json_dict(load_annotation_doc(str(doc["tgt"])))
        if doc.get("transform"):
            try:
                t = transform_from_json_dict(doc["transform"])
            except (KeyError, TypeError, ValueError) as e:
                raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"bad transform: {e}"})
            src_points = transform_points(src_points, t)
        report = score_curve_sets(
            fit_curve_set(src_points), fit_curve_set(tgt_points), int(doc.get("samples", 64))
        )
        return report.to_json_dict()

    # -- registration jobs --------------------------------------------------

    @app.post("/register")
    async def register_visits(request: Request) -> dict:
        doc = await json_body(request)
        for key in ("src", "tgt"):
            if key not in doc:
                raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"missing {key!r}"})
        src_id, tgt_id = str(doc["src"]), str(doc["tgt"])
        src = get_volume(src_id)
        tgt = get_volume(tgt_id)
        job_config = reg_config
        if doc.get("config"):
            try:
                job_config = registration_config_from_dict(doc["config"])
            except (KeyError, TypeError, ValueError) as e:
                raise HTTPException(status_code=400, detail={"error": "BadRequest", "message": f"bad config: {e}"})
        val_src = val_tgt = None
        try:
            src_pts = points_from_json_dict(load_annotation_doc(src_id))
            tgt_pts = points_from_json_dict(load_annotation_doc(tgt_id))
            val_src = fit_curve_set(src_pts, src_id)
            val_tgt = fit_curve_set(tgt_pts, tgt_id)
        except HTTPException:
            pass  # validation annotations are optional

        session = f"{src_id}:{tgt_id}"
        aligned_id = f"{src_id}_aligned_{tgt_id}"

        def task(progress):
            result = register(src, tgt, job_config, val_src=val_src, val_tgt=val_tgt, progress=progress)
            doc_out = result.to_json_dict()
            aligned = warp_volume(src, result.transform, tgt.geometry)
            save_volume(aligned, root / f"{aligned_id}.vmeta")
            with volumes_lock:
                volumes.pop(aligned_id, None)
            job_doc = {
                "registration": doc_out,
                "aligned_volume_id": aligned_id,
                "stopped_early": result.stopped_early,
            }
            (results_dir / f"{session.replace(':', '__')}.json").write_text(
                json.dumps(job_doc, indent=2) + "\n", encoding="utf-8"
            )
            return job_doc

        job_id = jobs.submit(session, task)
        return {"job_id": job_id, "session": session}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        return jobs.status(job_id)

    # -- static UI assets -----------------------------------------------------

    ui_dir = _frontend_dist()
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def _frontend_dist() -> Path | None:
    candidates = [
        Path(__file__).resolve().parents[2] / "frontend" / "dist",
        Path(os.environ.get("CURVEREG_UI_DIR", "")),
    ]
    for c in candidates:
        if c and c.is_dir() and (c / "index.html").exists():
            return c
    return None
