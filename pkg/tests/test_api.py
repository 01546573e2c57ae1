"""
HTTP 接口测试
"""

import time

import pytest
from fastapi.testclient import TestClient

from main import app

client = TestClient(app)

SMALL_EVAL = {"n_paths": 4, "horizon": 1.0, "step": 0.1}


class TestRoot:
    def test_root(self):
        response = client.get("/")
        assert response.status_code == 200
        assert "analytic" in response.json()["apis"]

    def test_health(self):
        response = client.get("/api/v1/health")
        assert response.status_code == 200
        assert response.json()["status"] == "healthy"


class TestAnalyticApi:
    def test_ergodic_linear(self):
        response = client.post("/api/v1/analytic/solve", json={"kind": "ergodic-linear"})
        assert response.status_code == 200
        assert response.json()["z_star"] == pytest.approx(0.5)

    def test_discounted_with_grid(self):
        response = client.post(
            "/api/v1/analytic/solve",
            json={"kind": "discounted-linear", "r": 0.1, "grid": [0.0, 1.0]},
        )
        assert response.status_code == 200
        result = response.json()
        assert result["z_star"] == pytest.approx(0.517133, abs=1e-4)
        assert result["grid"]["policy"] == [0.0, 2.0]

    def test_missing_discount_rate(self):
        response = client.post("/api/v1/analytic/solve", json={"kind": "discounted-linear"})
        assert response.status_code == 400

    def test_unknown_kind(self):
        response = client.post("/api/v1/analytic/solve", json={"kind": "cubic"})
        assert response.status_code == 422


class TestSimulateApi:
    def test_simulate_and_download(self, storage):
        response = client.post(
            "/api/v1/simulate", json={"preset": "ff-linear", "k": 1, "batch_size": 3, "seed": 7}
        )
        assert response.status_code == 200
        body = response.json()
        assert body["result"]["batch_size"] == 3
        assert body["result"]["n_steps"] == 64
        assert body["result"]["dimension"] == 2
        assert "paths.csv" in body["download_urls"]

        download = client.get(f"/api/v1/download/{body['task_id']}/paths.csv")
        assert download.status_code == 200
        assert download.text.startswith("# config_hash=")

    def test_missing_file(self, storage):
        response = client.get("/api/v1/download/no-such-task/paths.csv")
        assert response.status_code == 404

    def test_path_escape(self, storage):
        response = client.post("/api/v1/simulate", json={"seed": 1})
        task_id = response.json()["task_id"]
        escaped = client.get(f"/api/v1/download/{task_id}/..%2F..%2Fsecret.csv")
        assert escaped.status_code == 404

    def test_bad_grid(self, storage):
        response = client.post("/api/v1/simulate", json={"horizon": 0.1, "step": 0.03})
        assert response.status_code == 400


class TestEvaluateApi:
    def test_constant_policy(self, storage):
        response = client.post(
            "/api/v1/evaluate",
            json={"preset": "ff-linear", "k": 1, "policy": "constant", "theta": [1.0, 1.0], **SMALL_EVAL},
        )
        assert response.status_code == 200
        body = response.json()
        assert body["result"]["mode"] == "discounted"
        assert body["result"]["n_paths"] == 4
        assert set(body["download_urls"]) == {"evaluation.csv", "evaluation.json"}

    def test_learned_rejected(self, storage):
        response = client.post("/api/v1/evaluate", json={"policy": "learned", **SMALL_EVAL})
        assert response.status_code == 400

    def test_bad_preset(self, storage):
        response = client.post(
            "/api/v1/evaluate",
            json={"preset": "ff-cubic", "policy": "constant", "theta": [1.0], **SMALL_EVAL},
        )
        assert response.status_code == 400

    def test_theta_outside_box(self, storage):
        response = client.post(
            "/api/v1/evaluate",
            json={"policy": "constant", "theta": [5.0], **SMALL_EVAL},
        )
        assert response.status_code == 400


class TestTrainApi:
    def test_submit_and_poll(self, storage):
        response = client.post(
            "/api/v1/train",
            json={
                "preset": "ff-linear",
                "k": 0,
                "b": 2,
                "objective": "ergodic",
                "iterations": 2,
                "batch_size": 8,
            },
        )
        assert response.status_code == 202
        task = response.json()
        assert task["total_iterations"] == 2

        deadline = time.monotonic() + 120
        while task["status"] not in ("completed", "failed"):
            assert time.monotonic() < deadline
            time.sleep(0.1)
            task = client.get(f"/api/v1/train/{task['task_id']}").json()

        assert task["status"] == "completed", task["error_message"]
        assert task["iteration"] == 2
        assert task["summary"]["loss_variant"] == "ergodic-variance"
        assert "progress.csv" in task["download_urls"]
        download = client.get(
            f"/api/v1/download/{task['task_id']}/checkpoints/checkpoint_final.json"
        )
        assert download.status_code == 200

    def test_unknown_task(self):
        response = client.get("/api/v1/train/unknown")
        assert response.status_code == 404

    def test_invalid_profile(self, storage):
        response = client.post("/api/v1/train", json={"profile": "linear-d3-b7"})
        assert response.status_code == 400


class TestErrorHandler:
    def _call(self, exc):
        import asyncio

        from starlette.requests import Request

        from main import solver_error_handler

        request = Request({"type": "http", "method": "GET", "path": "/x", "headers": []})
        return asyncio.run(solver_error_handler(request, exc))

    def test_configuration_error_is_400(self):
        from app.core.exceptions import ConfigurationError

        response = self._call(ConfigurationError("坏参数"))
        assert response.status_code == 400
        assert b"ConfigurationError" in response.body

    def test_numerical_error_is_500(self):
        from app.core.exceptions import SkorokhodError

        response = self._call(SkorokhodError("不收敛"))
        assert response.status_code == 500
