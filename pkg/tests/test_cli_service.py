import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from urbanflow.cli import main
from urbanflow.dataset import WindDataset
from urbanflow.formats import load_model, read_field_file
from urbanflow.geomodel import load_tile
from urbanflow.raster import Direction, HeightGrid, rasterize
from urbanflow.service import create_app
from urbanflow.surrogate import predict_directional


def run_cli(*args, expect_exit=0):
    runner = CliRunner()
    result = runner.invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == expect_exit, result.output + (result.stderr or "")
    return result


def dir_digest(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Full small-scale CLI pipeline: city -> tiles -> dataset -> models."""
    root = tmp_path_factory.mktemp("cli_flow")
    city = root / "city.json"
    run_cli("synth-city", "--buildings", 200, "--seed", 9, "--side-m", 3000, "--out", city)
    run_cli("ingest", "--city", city, "--out", root / "ingested")
    ds_dir = root / "ds"
    run_cli("sample", "--city", city, "--n", 9, "--seed", 2, "--min-buildings", 2, "--out", ds_dir)
    run_cli("simulate", "--dataset", ds_dir, "--resolution", 16, "--workers", 2,
            "--max-iterations", 30000, "--split", "3/1/3")
    models = root / "models"
    for comp in ("u", "v"):
        run_cli("train", "--dataset", ds_dir, "--component", comp, "--seed", 0,
                "--max-epochs", 2, "--out", models / f"model_{comp}_s0.ufnm")
    return root


class TestCliPipeline:
    def test_ingest_outputs(self, cli_workspace):
        out = cli_workspace / "ingested"
        assert (out / "city.json").is_file()
        assert (out / "height_histogram.csv").is_file()
        assert (out / "height_histogram.png").is_file()

    def test_sample_deterministic_directory_hash(self, cli_workspace, tmp_path):
        city = cli_workspace / "city.json"
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("sample", "--city", city, "--n", 5, "--seed", 4, "--out", out)
        assert dir_digest(a) == dir_digest(b)

    def test_predict_writes_field_and_figure(self, cli_workspace):
        models = cli_workspace / "models"
        out = cli_workspace / "pred"
        run_cli("predict", "--model-u", models / "model_u_s0.ufnm",
                "--model-v", models / "model_v_s0.ufnm",
                "--layout", cli_workspace / "ds" / "tiles" / "tile_00000.json",
                "--direction", "E", "--out", out)
        arr = read_field_file(out / "tile_00000_E.ufnd")
        assert arr.shape == (2, 16, 16)
        assert (out / "tile_00000_E.png").is_file()

    def test_evaluate_writes_reports(self, cli_workspace):
        out = cli_workspace / "eval"
        run_cli("evaluate", "--dataset", cli_workspace / "ds",
                "--models", cli_workspace / "models", "--out", out)
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["mean"]) == {"u", "v"}
        assert (out / "mae_table.csv").read_text().startswith("component,")

    def test_correlate_writes_rho_and_figure(self, cli_workspace):
        out = cli_workspace / "corr"
        result = run_cli("correlate", "--dataset", cli_workspace / "ds",
                         "--models", cli_workspace / "models", "--out", out)
        assert "Spearman rho" in result.output
        assert (out / "correlation.png").is_file()
        doc = json.loads((out / "report.json").read_text())
        assert set(doc["rho"]) == {"u", "v"}

    def test_comfort_writes_panel_and_table(self, cli_workspace):
        models = cli_workspace / "models"
        out = cli_workspace / "comfort"
        run_cli("comfort", "--model-u", models / "model_u_s0.ufnm",
                "--model-v", models / "model_v_s0.ufnm",
                "--layout", cli_workspace / "ds" / "tiles" / "tile_00001.json",
                "--threshold", 1.5, "--out", out)
        rows = (out / "comfort.csv").read_text().strip().splitlines()
        assert len(rows) == 5  # header + 4 directions
        assert (out / "comfort_panel.png").is_file()

    def test_mislabeled_manifest_gives_error_line_and_nonzero_exit(self, cli_workspace, tmp_path):
        import shutil

        broken = tmp_path / "broken_ds"
        shutil.copytree(cli_workspace / "ds", broken)
        mpath = broken / "manifest.json"
        doc = json.loads(mpath.read_text())
        victim = next(iter(doc["files"]))
        doc["files"][victim] = "0" * 64
        doc["dataset_hash"] = __import__("urbanflow.dataset", fromlist=["_dataset_hash"])._dataset_hash(doc)
        mpath.write_text(json.dumps(doc))
        runner = CliRunner()
        result = runner.invoke(
            main,
            ["evaluate", "--dataset", str(broken), "--models", str(cli_workspace / "models"),
             "--out", str(tmp_path / "out")],
        )
        assert result.exit_code != 0
        assert "UF-ERROR IntegrityError" in result.stderr

    def test_size_study_cli_smoke(self, cli_workspace, tmp_path):
        out = tmp_path / "size"
        run_cli("size-study", "--dataset", cli_workspace / "ds", "--sizes", "2,3",
                "--seeds", "0", "--max-epochs", 1, "--cache", tmp_path / "cache", "--out", out)
        assert (out / "size_table.csv").is_file()
        assert (out / "size_study.png").is_file()

    def test_density_study_cli_smoke(self, cli_workspace, tmp_path):
        out = tmp_path / "dens"
        run_cli("density-study", "--dataset", cli_workspace / "ds", "--sizes", "2,3",
                "--seeds", "0", "--max-epochs", 1, "--cache", tmp_path / "cache", "--out", out)
        rows = (out / "density_table.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 2 * 2 * 2  # header + sizes x modes x components


@pytest.fixture(scope="module")
def service_env(cli_workspace):
    app = create_app(cli_workspace / "models")
    ds = WindDataset(cli_workspace / "ds")
    return app, ds, cli_workspace


class TestService:
    def test_health_lifecycle_503_then_200(self, service_env):
        app, _, _ = service_env
        assert TestClient(app).get("/health").status_code == 503  # before lifespan
        with TestClient(app) as client:
            r = client.get("/health")
            assert r.status_code == 200
            assert r.json()["resolution"] == 16

    def test_model_meta(self, service_env):
        app, _, _ = service_env
        with TestClient(app) as client:
            doc = client.get("/model/meta").json()
            assert set(doc) == {"u", "v"}
            assert doc["u"]["spec"]["kernel"] == 5
            assert doc["u"]["stats"]["h_max"] > 0

    def test_all_zero_heights_finite(self, service_env):
        app, _, _ = service_env
        with TestClient(app) as client:
            body = {"heights": np.zeros((16, 16)).tolist(), "direction": "N"}
            r = client.post("/predict", json=body)
            assert r.status_code == 200
            doc = r.json()
            assert np.all(np.isfinite(np.array(doc["u"])))
            assert doc["latency_ms"] > 0

    def test_loopback_bit_exact_for_20_random_layouts(self, service_env):
        app, ds, root = service_env
        bundles = {
            "u": load_model(root / "models" / "model_u_s0.ufnm"),
            "v": load_model(root / "models" / "model_v_s0.ufnm"),
        }
        rng = np.random.default_rng(0)
        with TestClient(app) as client:
            for i in range(20):
                heights = np.zeros((16, 16), dtype=np.float32)
                for _ in range(rng.integers(1, 5)):
                    r0, c0 = rng.integers(0, 12, 2)
                    heights[r0 : r0 + rng.integers(2, 4), c0 : c0 + rng.integers(2, 4)] = float(
                        rng.uniform(3, 40)
                    )
                direction = Direction(["N", "E", "S", "W"][i % 4])
                r = client.post(
                    "/predict",
                    json={"heights": heights.astype(float).tolist(), "direction": direction.value},
                )
                assert r.status_code == 200
                doc = r.json()
                field = predict_directional(bundles, HeightGrid(heights, ds.cell_size), direction)
                assert np.array_equal(np.array(doc["u"]), field.u.astype(np.float64))
                assert np.array_equal(np.array(doc["v"]), field.v.astype(np.float64))
                mag = np.array(doc["magnitude"])
                assert np.abs(mag - np.sqrt(np.array(doc["u"]) ** 2 + np.array(doc["v"]) ** 2)).max() < 1e-6

    def test_cli_predict_equals_service(self, service_env, tmp_path):
        app, ds, root = service_env
        tile = load_tile(root / "ds" / "tiles" / "tile_00002.json")
        out = tmp_path / "cli_pred"
        run_cli("predict", "--model-u", root / "models" / "model_u_s0.ufnm",
                "--model-v", root / "models" / "model_v_s0.ufnm",
                "--layout", root / "ds" / "tiles" / "tile_00002.json",
                "--direction", "W", "--out", out, "--no-plot")
        cli_arr = read_field_file(out / "tile_00002_W.ufnd")
        grid = rasterize(tile, 16)
        with TestClient(app) as client:
            r = client.post(
                "/predict",
                json={"heights": grid.data.astype(float).tolist(), "direction": "W"},
            )
        doc = r.json()
        assert np.array_equal(np.array(doc["u"], dtype=np.float32), cli_arr[0])
        assert np.array_equal(np.array(doc["v"], dtype=np.float32), cli_arr[1])

    def test_error_codes(self, service_env):
        app, _, _ = service_env
        with TestClient(app) as client:
            assert client.post("/predict", json={"heights": [[0.0]], "direction": "Q"}).status_code == 400
            assert client.post("/predict", json={"heights": "zzz", "direction": "N"}).status_code == 400
            wrong = np.zeros((8, 8)).tolist()
            assert client.post("/predict", json={"heights": wrong, "direction": "N"}).status_code == 400
            bad = np.zeros((16, 16)).tolist()
            bad[0][0] = float("nan")
            r = client.post(
                "/predict",
                content=json.dumps({"heights": bad, "direction": "N"}),
                headers={"content-type": "application/json"},
            )
            assert r.status_code == 422
            r = client.post(
                "/predict", content=b"{not json", headers={"content-type": "application/json"}
            )
            assert r.status_code == 400

    def test_oracle_endpoint_labeled_slow(self, service_env):
        app, _, _ = service_env
        heights = np.zeros((16, 16))
        heights[6:9, 6:9] = 20.0
        with TestClient(app) as client:
            r = client.post("/oracle", json={"heights": heights.tolist(), "direction": "S"})
            assert r.status_code == 200
            doc = r.json()
            assert doc["oracle"]["slow"] is True
            assert doc["oracle"]["converged"]

    def test_concurrent_requests_identical_to_serial(self, service_env):
        app, _, _ = service_env
        heights = np.zeros((16, 16))
        heights[4:8, 6:10] = 25.0
        body = {"heights": heights.tolist(), "direction": "E"}
        with TestClient(app) as client:
            serial = client.post("/predict", json=body).json()

            def hit(_):
                return client.post("/predict", json=body).json()

            with ThreadPoolExecutor(max_workers=4) as pool:
                results = list(pool.map(hit, range(8)))
        for doc in results:
            assert doc["u"] == serial["u"] and doc["v"] == serial["v"]
