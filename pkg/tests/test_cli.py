import json

import numpy as np
import pytest

from curvereg.cli import run
from curvereg.keycurve import KeyPoint, save_points
from curvereg.synth import PhantomSpec, make_pair
from curvereg.transforms import Affine3, transform_to_json_dict
from curvereg.volume import CHANNEL_PET, load_volume, save_volume


def run_cli(capsys, *argv):
    code = run(list(argv))
    captured = capsys.readouterr()
    doc = json.loads(captured.out)
    return code, doc, captured.err


def quad_points(curve_id, coeffs, zs):
    cx, cy = coeffs
    return [
        KeyPoint(curve_id, z=float(z), x=float(np.polyval(cx, z)), y=float(np.polyval(cy, z)))
        for z in zs
    ]


@pytest.fixture
def annotations(tmp_path):
    points = quad_points("a", ((0.01, 0.3, 2.0), (0.0, -0.2, 1.0)), [0, 10, 20, 30]) + quad_points(
        "b", ((0.002, -0.1, 8.0), (0.001, 0.4, -3.0)), [5, 15, 25, 35]
    )
    src = tmp_path / "src_points.json"
    save_points(points, src, visit_id="v1")
    shifted = [
        KeyPoint(p.curve_id, z=p.z, x=p.x + 3.0, y=p.y + 4.0, visit_id="v2") for p in points
    ]
    tgt = tmp_path / "tgt_points.json"
    save_points(shifted, tgt, visit_id="v2")
    return src, tgt


class TestFit:
    def test_fit_writes_curves(self, capsys, tmp_path, annotations):
        src, _ = annotations
        out = tmp_path / "curves.json"
        code, doc, _ = run_cli(capsys, "fit", "--points", str(src), "--out", str(out))
        assert code == 0
        assert sorted(doc["curves"]) == ["a", "b"]
        assert json.loads(out.read_text())["curves"]["a"]["coeff_x"] == doc["curves"]["a"]["coeff_x"]

    def test_fit_two_points_exit_2(self, capsys, tmp_path):
        path = tmp_path / "two.json"
        save_points(quad_points("a", ((0, 1, 0), (0, 0, 0)), [0, 5]), path)
        code, doc, _ = run_cli(capsys, "fit", "--points", str(path))
        assert code == 2
        assert doc["error"]["name"] == "InsufficientPoints"


class TestScore:
    def test_identical_files_score_zero(self, capsys, annotations):
        src, _ = annotations
        code, doc, _ = run_cli(capsys, "score", "--src", str(src), "--tgt", str(src))
        assert code == 0
        assert doc["rmse_mm"] == 0.0

    def test_rigid_shift_scores_five(self, capsys, annotations):
        src, tgt = annotations
        code, doc, _ = run_cli(capsys, "score", "--src", str(src), "--tgt", str(tgt))
        assert code == 0
        assert doc["rmse_mm"] == pytest.approx(5.0, abs=1e-9)

    def test_identity_transform_equals_no_transform(self, capsys, tmp_path, annotations):
        src, tgt = annotations
        ident = tmp_path / "identity.json"
        ident.write_text(json.dumps(transform_to_json_dict(Affine3.identity())))
        code_a, doc_a, _ = run_cli(capsys, "score", "--src", str(src), "--tgt", str(tgt))
        code_b, doc_b, _ = run_cli(
            capsys, "score", "--src", str(src), "--tgt", str(tgt), "--transform", str(ident)
        )
        assert code_a == code_b == 0
        assert doc_a == doc_b

    def test_idempotent_byte_identical(self, capsys, annotations):
        src, tgt = annotations
        _, doc_a, _ = run_cli(capsys, "score", "--src", str(src), "--tgt", str(tgt))
        _, doc_b, _ = run_cli(capsys, "score", "--src", str(src), "--tgt", str(tgt))
        assert json.dumps(doc_a, sort_keys=True) == json.dumps(doc_b, sort_keys=True)


class TestUsageErrors:
    def test_unknown_flag_exit_1(self, capsys):
        code, doc, _ = run_cli(capsys, "score", "--nonsense", "x")
        assert code == 1
        assert doc["error"]["name"] == "UsageError"

    def test_unknown_subcommand_exit_1(self, capsys):
        code, doc, _ = run_cli(capsys, "frobnicate")
        assert code == 1

    def test_missing_file_exit_2(self, capsys):
        code, doc, _ = run_cli(capsys, "score", "--src", "/no/such.json", "--tgt", "/no/such2.json")
        assert code == 2


class TestSynthResidualEval:
    def test_synth_writes_pair(self, capsys, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(
            json.dumps(
                {
                    "phantom": {"dims": [32, 32, 64], "seed": 3},
                    "deform": {"seed": 7, "max_tps_jitter_mm": 4.0},
                    "perturb": 0.1,
                }
            )
        )
        out = tmp_path / "pair"
        code, doc, _ = run_cli(capsys, "synth", "--spec", str(spec), "--out", str(out))
        assert code == 0
        assert (out / "src.vmeta").exists()
        assert (out / "tgt.vmeta").exists()
        assert (out / "gt_transform.json").exists()
        assert doc["unaligned_rmse_mm"] > 0

        # eval with the ground-truth transform reaches the noise floor
        code, rep, _ = run_cli(
            capsys, "eval",
            "--result", str(out / "gt_transform.json"),
            "--src", str(out / "src_points.json"),
            "--tgt", str(out / "tgt_points.json"),
        )
        assert code == 0
        assert rep["aligned_rmse_mm"] <= 0.5
        assert rep["unaligned_rmse_mm"] == pytest.approx(doc["unaligned_rmse_mm"], abs=1e-9)

    def test_residual_self_is_zero(self, capsys, tmp_path):
        pair = make_pair(PhantomSpec(dims=(32, 32, 64), seed=1))
        vol = tmp_path / "v.vmeta"
        save_volume(pair.src, vol)
        out = tmp_path / "res.vmeta"
        code, doc, _ = run_cli(
            capsys, "residual", "--a", str(vol), "--b", str(vol), "--channel", "PET", "--out", str(out)
        )
        assert code == 0
        assert doc["max_abs"] == 0.0
        loaded = load_volume(out)
        assert np.all(loaded.channel_data(CHANNEL_PET) == 0.0)
