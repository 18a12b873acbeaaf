"""
Integration tests for the HTTP API.
"""
import json

import pytest
from fastapi.testclient import TestClient

import wflab
from wflab.main import EXPERIMENT_KINDS, create_app


def _scan_body(out):
    return {
        "model": {"n": 2, "theta": 1.0, "p": [0.5, 0.5], "gammas": [0.1, 0.05, 0.02]},
        "event": {"lower": [0.8, 0.0], "upper": [1.0, 1.0]},
        "output": {"directory": str(out)},
    }


@pytest.mark.integration
class TestExperimentAPI:
    """Test the experiment endpoints"""

    @pytest.fixture
    def client(self):
        with TestClient(create_app()) as client:
            yield client

    def test_health_check(self, client):
        response = client.get("/health")

        assert response.status_code == 200
        assert response.json() == {"status": "healthy", "version": wflab.__version__}

    def test_list_experiments(self, client):
        response = client.get("/api/experiments")

        assert response.status_code == 200
        data = response.json()
        kinds = sorted(entry["experiment"]["kind"] for entry in data["experiments"])
        assert kinds == sorted(EXPERIMENT_KINDS)
        assert data["stats"]["failed_experiments"] == 0

    def test_unknown_kind(self, client):
        response = client.post("/api/experiments/bootstrap/run", json={})
        assert response.status_code == 404

    def test_invalid_config(self, client, tmp_path):
        body = _scan_body(tmp_path)
        body["model"]["p"] = [0.5, 0.6]

        response = client.post("/api/experiments/equilibrium-scan/run", json=body)

        assert response.status_code == 422
        assert response.json()["detail"].startswith("model.p: ")

    def test_kind_must_match_endpoint(self, client, tmp_path):
        body = {**_scan_body(tmp_path), "experiment": {"kind": "simulate"}}

        response = client.post("/api/experiments/equilibrium-scan/run", json=body)

        assert response.status_code == 422

    def test_run_exact_scan(self, client, tmp_path):
        out = tmp_path / "scan"

        response = client.post("/api/experiments/equilibrium-scan/run", json=_scan_body(out))

        assert response.status_code == 200
        data = response.json()
        assert data["status"] == "completed"
        assert data["kind"] == "equilibrium-scan"
        assert data["directory"] == str(out)
        assert data["summary"]["mode"] == "exact"
        assert data["summary"]["target"] == pytest.approx(-0.2231435513142097, rel=1e-6)
        assert len((out / "results.csv").read_text().splitlines()) == 4
        assert json.loads((out / "summary.json").read_text())["status"] == "completed"
