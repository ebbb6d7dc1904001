"""Command-line entry point for the full pipeline.

Every subcommand prints one machine-readable JSON document to stdout and
human-oriented messages to stderr. Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .benchmark import BenchmarkConfig, run_benchmark
from .errors import CurveRegError, MissingFile
from .keycurve import (
    curve_set_to_json_dict,
    fit_curve_set,
    load_points,
    save_points,
    score_curve_sets,
    transform_points,
)
from .register import RegistrationConfig, evaluate, register, registration_config_from_dict
from .synth import PhantomSpec, make_pair
from .transforms import (
    DeformationConfig,
    transform_from_json_dict,
    transform_to_json_dict,
)
from .volume import load_volume, residual_image, save_volume

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant that raises instead of exiting with code 2."""

    def error(self, message):
        raise _UsageError(message)


def _load_json(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise MissingFile(f"no such file: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _load_points(path: str):
    if not Path(path).exists():
        raise MissingFile(f"no such annotation file: {path}")
    return load_points(path)


def _emit(doc: dict) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


def _info(message: str) -> None:
    print(message, file=sys.stderr)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> dict:
    points = _load_points(args.points)
    curves = fit_curve_set(points)
    doc = curve_set_to_json_dict(curves)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        _info(f"wrote {len(curves.curves)} curves to {args.out}")
    return doc


def cmd_score(args) -> dict:
    src_points = _load_points(args.src)
    tgt_points = _load_points(args.tgt)
    if args.transform:
        t = transform_from_json_dict(_load_json(args.transform))
        src_points = transform_points(src_points, t)
    report = score_curve_sets(
        fit_curve_set(src_points), fit_curve_set(tgt_points), args.samples
    )
    _info(f"rmse {report.rmse_mm:.3f} mm over {len(report.per_curve)} curves")
    return report.to_json_dict()


def cmd_synth(args) -> dict:
    spec_doc = _load_json(args.spec)
    phantom = PhantomSpec(**spec_doc.get("phantom", {}))
    deform = DeformationConfig(**spec_doc.get("deform", {}))
    perturb = float(spec_doc.get("perturb", phantom.perturbation))
    pair = make_pair(phantom, deform=deform, perturb=perturb)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_volume(pair.src, out / "src.vmeta")
    save_volume(pair.tgt, out / "tgt.vmeta")
    save_points(pair.src_points, out / "src_points.json", visit_id="src")
    save_points(pair.tgt_points, out / "tgt_points.json", visit_id="tgt")
    gt = transform_to_json_dict(pair.transform)
    (out / "gt_transform.json").write_text(json.dumps(gt, indent=2) + "\n", encoding="utf-8")
    baseline = score_curve_sets(pair.src_curves, pair.tgt_curves).rmse_mm
    _info(f"phantom pair in {out}, unaligned rmse {baseline:.2f} mm")
    return {
        "out_dir": str(out),
        "files": {
            "src": "src.vmeta",
            "tgt": "tgt.vmeta",
            "src_points": "src_points.json",
            "tgt_points": "tgt_points.json",
            "gt_transform": "gt_transform.json",
        },
        "unaligned_rmse_mm": baseline,
        "n_curves": len(pair.src_curves.curves),
    }


def cmd_register(args) -> dict:
    src = load_volume(args.src)
    tgt = load_volume(args.tgt)
    cfg = (
        registration_config_from_dict(_load_json(args.config))
        if args.config
        else RegistrationConfig()
    )
    val_src = val_tgt = None
    if args.val_src and args.val_tgt:
        val_src = fit_curve_set(_load_points(args.val_src))
        val_tgt = fit_curve_set(_load_points(args.val_tgt))
    result = register(src, tgt, cfg, val_src=val_src, val_tgt=val_tgt)
    doc = result.to_json_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        _info(f"wrote registration result to {args.out}")
    _info(
        f"final objective {result.objective_trace[-1]:.5f} "
        f"({len(result.objective_trace)} evaluations, stopped_early={result.stopped_early})"
    )
    return doc


def cmd_eval(args) -> dict:
    result_doc = _load_json(args.result)
    t = transform_from_json_dict(result_doc)
    report = evaluate(_load_points(args.src), _load_points(args.tgt), t, args.samples)
    _info(
        f"aligned {report.aligned_rmse_mm:.3f} mm vs unaligned "
        f"{report.unaligned_rmse_mm:.3f} mm"
    )
    return report.to_json_dict()


def cmd_residual(args) -> dict:
    a = load_volume(args.a)
    b = load_volume(args.b)
    res = residual_image(a, b, args.channel)
    save_volume(res, args.out)
    data = res.channel_data(args.channel)
    stats = {
        "out": str(Path(args.out)),
        "channel": args.channel,
        "mean_abs": float(np.abs(data).mean()),
        "max_abs": float(np.abs(data).max()),
    }
    _info(f"residual written to {args.out} (mean |d| = {stats['mean_abs']:.4f})")
    return stats


def cmd_bench(args) -> dict:
    cfg = BenchmarkConfig(n_pairs=args.pairs, base_seed=args.seed)
    summary = run_benchmark(cfg, workers=args.workers)
    _info(
        f"median unaligned {summary['median_unaligned_rmse_mm']:.2f} mm -> "
        f"final {summary['median_final_rmse_mm']:.2f} mm"
    )
    return summary


def cmd_serve(args) -> dict:
    import uvicorn

    from .service import create_app

    app = create_app(Path(args.root))
    _info(f"serving {args.root} on port {args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return {"stopped": True}


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="curvereg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit key curves to an annotation file")
    p.add_argument("--points", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="key-curve RMSE between two annotation files")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--transform")
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="generate a synthetic phantom pair")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("register", help="register two volumes (affine then TPS)")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--val-src")
    p.add_argument("--val-tgt")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate a registration result on annotations")
    p.add_argument("--result", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--samples", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("residual", help="voxel-wise difference volume")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--channel", default="PET")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_residual)

    p = sub.add_parser("bench", help="run the synthetic recovery benchmark")
    p.add_argument("--pairs", type=int, default=20)
    p.add_argument("--seed", type=int, default=2000)
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", help="start the annotation HTTP service")
    p.add_argument("--root", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def run(argv: list[str]) -> int:
    """Dispatch one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(json.dumps({"error": {"name": "UsageError", "message": str(e)}}))
        _info(f"usage error: {e}")
        return EXIT_USAGE
    try:
        _emit(args.func(args))
        return EXIT_OK
    except CurveRegError as e:
        _emit({"error": {"name": e.name, "message": str(e)}})
        _info(f"{e.name}: {e}")
        return e.exit_code
    except (OSError, json.JSONDecodeError, KeyError, ValueError, TypeError) as e:
        _emit({"error": {"name": type(e).__name__, "message": str(e)}})
        _info(f"{type(e).__name__}: {e}")
        return EXIT_DATA
    except Exception as e:  # unexpected: treat as numerical/internal failure
        traceback.print_exc()
        _emit({"error": {"name": type(e).__name__, "message": str(e)}})
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
