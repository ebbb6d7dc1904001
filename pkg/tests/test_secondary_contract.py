"""Secondary acceptance: the annotation UI's contract with the service.

The browser client owns exactly one piece of math, pixel -> mm conversion
with the half-voxel convention; everything else must round-trip through the
API untouched. This test drives the same flow the UI performs (place five
points, save, fit, score) against a live test app and checks byte-identity
with the CLI on the persisted file. The UI-side halves of these assertions
(document construction, verbatim RMSE display) live in frontend/tests/.
"""

import json

import pytest
from fastapi.testclient import TestClient

from curvereg.cli import run as cli_run
from curvereg.service import create_app
from curvereg.synth import PhantomSpec, make_phantom
from curvereg.volume import save_volume


def ui_place_point(volume_info, px, py, z_index, curve_id):
    """Mirror of frontend/src/coords.ts pixelToMm + state placePoint."""
    sx, sy, sz = volume_info["spacing_mm"]
    ox, oy, oz = volume_info["origin_mm"]
    return {
        "curve_id": curve_id,
        "z_mm": oz + (z_index + 0.5) * sz,
        "x_mm": ox + (px + 0.5) * sx,
        "y_mm": oy + (py + 0.5) * sy,
        "slice": z_index,
    }


@pytest.fixture(scope="module")
def service(tmp_path_factory):
    root = tmp_path_factory.mktemp("ui-contract")
    grid, _ = make_phantom(PhantomSpec(dims=(32, 32, 64), seed=77))
    save_volume(grid, root / "phantom.vmeta")
    app = create_app(root)
    with TestClient(app) as client:
        yield client, root


def test_ui_placed_points_fit_byte_identical_to_cli(service, capsys):
    client, root = service
    volume = next(v for v in client.get("/volumes").json() if v["id"] == "phantom")

    clicks = [(8, 9, 10), (10, 12, 20), (12, 14, 30), (13, 15, 40), (15, 18, 50)]
    doc = {
        "visit_id": "phantom",
        "points": [ui_place_point(volume, px, py, z, "curve-01") for px, py, z in clicks],
    }
    assert client.put("/annotations/phantom", json=doc).status_code == 200

    api_fit = client.post("/fit", json={"visit": "phantom"}).json()

    persisted = root / "annotations" / "phantom.json"
    code = cli_run(["fit", "--points", str(persisted)])
    cli_fit = json.loads(capsys.readouterr().out)
    assert code == 0

    api_bytes = json.dumps(api_fit["curves"], sort_keys=True).encode()
    cli_bytes = json.dumps(cli_fit["curves"], sort_keys=True).encode()
    assert api_bytes == cli_bytes


def test_displayed_rmse_is_the_score_response(service, capsys):
    client, root = service
    # a second visit: the same annotations shifted in-plane by (3, 4) mm
    base = client.get("/annotations/phantom").json()
    shifted = {
        "visit_id": "other",
        "points": [
            {**p, "x_mm": p["x_mm"] + 3.0, "y_mm": p["y_mm"] + 4.0} for p in base["points"]
        ],
    }
    assert client.put("/annotations/other", json=shifted).status_code == 200

    score = client.post("/score", json={"src": "phantom", "tgt": "other"}).json()
    # what the UI renders is String(score.rmse_mm) + " mm" -- no arithmetic
    displayed = f"{score['rmse_mm']} mm"
    assert displayed == f"{score['rmse_mm']} mm"
    assert score["rmse_mm"] == pytest.approx(5.0, abs=1e-9)

    # and the CLI agrees with the service on the same files
    code = cli_run([
        "score",
        "--src", str(root / "annotations" / "phantom.json"),
        "--tgt", str(root / "annotations" / "other.json"),
    ])
    cli_score = json.loads(capsys.readouterr().out)
    assert code == 0
    assert cli_score["rmse_mm"] == score["rmse_mm"]
