import io
import json
import threading
import time

import pytest
from fastapi.testclient import TestClient
from PIL import Image

from curvereg.cli import run as cli_run
from curvereg.keycurve import KeyPoint, points_to_json_dict, save_points
from curvereg.register import AffineStageConfig, RegistrationConfig, TpsStageConfig
from curvereg.service import create_app
from curvereg.synth import PhantomSpec, make_pair
from curvereg.volume import save_volume


@pytest.fixture(scope="module")
def data_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("service-root")
    pair = make_pair(PhantomSpec(dims=(32, 32, 64), seed=12), transform=None, perturb=0.0,
                     deform=None)
    save_volume(pair.src, root / "visit1.vmeta")
    save_volume(pair.tgt, root / "visit2.vmeta")
    (root / "annotations").mkdir()
    save_points(pair.src_points, root / "annotations" / "visit1.json", visit_id="visit1")
    save_points(pair.tgt_points, root / "annotations" / "visit2.json", visit_id="visit2")
    return root


@pytest.fixture(scope="module")
def client(data_root):
    cfg = RegistrationConfig(
        affine=AffineStageConfig(max_evaluations=150, restarts=1),
        tps=TpsStageConfig(grid=(2, 2, 2), max_sweeps=1),
    )
    app = create_app(data_root, registration_config=cfg)
    with TestClient(app) as c:
        yield c


class TestVolumes:
    def test_list(self, client):
        vols = {v["id"]: v for v in client.get("/volumes").json()}
        assert "visit1" in vols and "visit2" in vols
        assert vols["visit1"]["dims"] == [32, 32, 64]
        assert "CT" in vols["visit1"]["channels"]

    def test_slice_png(self, client):
        r = client.get("/volumes/visit1/slice", params={"channel": "CT", "z": 10})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        img = Image.open(io.BytesIO(r.content))
        assert img.size == (32, 32)
        assert img.mode == "L"

    def test_slice_beyond_nz_404(self, client):
        assert client.get("/volumes/visit1/slice", params={"z": 64}).status_code == 404

    def test_unknown_volume_404(self, client):
        assert client.get("/volumes/ghost/slice", params={"z": 0}).status_code == 404

    def test_overlay_png(self, client):
        r = client.get("/volumes/visit1/overlay", params={"z": 32, "alpha": 0.4})
        assert r.status_code == 200
        img = Image.open(io.BytesIO(r.content))
        assert img.mode == "RGB"

    def test_bad_window_400(self, client):
        r = client.get("/volumes/visit1/slice", params={"z": 1, "window": "oops"})
        assert r.status_code == 400


class TestAnnotations:
    def test_get_unknown_visit_404(self, client):
        assert client.get("/annotations/nobody").status_code == 404

    def test_put_then_get_round_trip(self, client):
        points = [
            KeyPoint("c1", z=float(z), x=float(z) * 0.5, y=1.0 - float(z), visit_id="scratch")
            for z in range(5)
        ]
        doc = points_to_json_dict(points, visit_id="scratch")
        r = client.put("/annotations/scratch", json=doc)
        assert r.status_code == 200
        assert r.json()["n_points"] == 5
        assert client.get("/annotations/scratch").json() == doc

    def test_put_malformed_body_400(self, client):
        r = client.put(
            "/annotations/bad", content=b"{not json", headers={"content-type": "application/json"}
        )
        assert r.status_code == 400
        assert client.put("/annotations/bad", json={"nope": 1}).status_code == 400

    def test_concurrent_get_sees_complete_documents(self, client):
        docs = [
            points_to_json_dict(
                [KeyPoint("c", z=float(z), x=float(k), y=0.0) for z in range(4)], visit_id="spin"
            )
            for k in range(6)
        ]
        client.put("/annotations/spin", json=docs[0])
        seen = []
        stop = threading.Event()

        def reader():
            while not stop.is_set():
                body = client.get("/annotations/spin").json()
                seen.append(json.dumps(body, sort_keys=True))

        t = threading.Thread(target=reader)
        t.start()
        for d in docs:
            client.put("/annotations/spin", json=d)
        stop.set()
        t.join()
        valid = {json.dumps(d, sort_keys=True) for d in docs}
        assert set(seen) <= valid  # never a partial document


class TestFitAndScore:
    def test_fit_equals_cli_fit(self, client, data_root, capsys):
        r = client.post("/fit", json={"visit": "visit1"})
        assert r.status_code == 200
        api_doc = r.json()
        code = cli_run(["fit", "--points", str(data_root / "annotations" / "visit1.json")])
        cli_doc = json.loads(capsys.readouterr().out)
        assert code == 0
        assert json.dumps(api_doc["curves"], sort_keys=True) == json.dumps(
            cli_doc["curves"], sort_keys=True
        )

    def test_fit_includes_bands_with_floor(self, client):
        bands = client.post("/fit", json={"visit": "visit1"}).json()["bands"]
        for rows in bands.values():
            sx = [r["sigma_x_mm"] for r in rows]
            assert min(sx) >= 2.52 - 1e-9
            # extrapolated ends at least as wide as the middle
            assert sx[0] >= sx[len(sx) // 2] - 1e-9
            assert sx[-1] >= sx[len(sx) // 2] - 1e-9

    def test_score_self_is_zero(self, client):
        r = client.post("/score", json={"src": "visit1", "tgt": "visit1"})
        assert r.status_code == 200
        assert r.json()["rmse_mm"] == 0.0

    def test_fit_missing_visit_404(self, client):
        assert client.post("/fit", json={"visit": "ghost"}).status_code == 404

    def test_fit_domain_error_422_named(self, client):
        doc = points_to_json_dict(
            [KeyPoint("only2", z=float(z), x=0.0, y=0.0) for z in range(2)], visit_id="short"
        )
        client.put("/annotations/short", json=doc)
        r = client.post("/fit", json={"visit": "short"})
        assert r.status_code == 422
        assert r.json()["error"] == "InsufficientPoints"

    def test_score_missing_key_400(self, client):
        assert client.post("/score", json={"src": "visit1"}).status_code == 400


class TestJobs:
    def wait_for(self, client, job_id, timeout=300.0):
        t0 = time.time()
        while time.time() - t0 < timeout:
            doc = client.get(f"/jobs/{job_id}").json()
            if doc["state"] in ("done", "failed"):
                return doc
            time.sleep(0.3)
        raise AssertionError("job did not finish in time")

    def test_register_lifecycle(self, client):
        r = client.post("/register", json={"src": "visit1", "tgt": "visit2"})
        assert r.status_code == 200
        job_id = r.json()["job_id"]
        status = client.get(f"/jobs/{job_id}").json()
        assert status["state"] in ("queued", "running", "done")
        final = self.wait_for(client, job_id)
        assert final["state"] == "done"
        assert final["progress"] == 1.0
        result = final["result"]
        assert "registration" in result
        aligned_id = result["aligned_volume_id"]
        vols = [v["id"] for v in client.get("/volumes").json()]
        assert aligned_id in vols
        # scoring with the registration's transform works end to end
        transform = {
            "affine": result["registration"]["affine"],
            "tps": result["registration"]["tps"],
        }
        r = client.post("/score", json={"src": "visit1", "tgt": "visit2", "transform": transform})
        assert r.status_code == 200

    def test_conflict_while_running_409(self, client):
        r1 = client.post("/register", json={"src": "visit2", "tgt": "visit1"})
        assert r1.status_code == 200
        r2 = client.post("/register", json={"src": "visit2", "tgt": "visit1"})
        assert r2.status_code == 409
        self.wait_for(client, r1.json()["job_id"])

    def test_unknown_job_404(self, client):
        assert client.get("/jobs/doesnotexist").status_code == 404

    def test_register_accepts_inline_config(self, client):
        body = {
            "src": "visit1",
            "tgt": "visit1",
            "config": {
                "affine": {"max_evaluations": 60, "restarts": 1},
                "tps": {"grid": [2, 2, 2], "max_sweeps": 0},
            },
        }
        r = client.post("/register", json=body)
        assert r.status_code == 200
        final = self.wait_for(client, r.json()["job_id"])
        assert final["state"] == "done"

    def test_register_bad_config_400(self, client):
        body = {"src": "visit1", "tgt": "visit2", "config": {"affine": {"bogus_knob": 1}}}
        assert client.post("/register", json=body).status_code == 400
