"""HTTP service contract: enrollment, auth, batches, responses, export."""

import pytest
from fastapi.testclient import TestClient

from aicscale.design import Method, build_design
from aicscale.service import create_app
from aicscale.store import ResponseStore
from conftest import build_synthetic_manifest


@pytest.fixture()
def client(tmp_path):
    manifest = build_synthetic_manifest(n_sources=2, codecs=("cA", "cB"),
                                        levels=3)
    manifest.base_dir = tmp_path  # static mount needs a real directory
    designs = [build_design(manifest, m, cross_count=4, batch_size=28,
                            seed=5) for m in (Method.BTC, Method.PTC)]
    store = ResponseStore(tmp_path / "data", designs, target_coverage=2,
                          max_batches_per_participant=2, durable=False)
    app = create_app(store, manifest, admin_token="admin-secret")
    with TestClient(app) as c:
        yield c
    store.close()


def _enroll(client, method="btc"):
    r = client.post("/api/enroll", json={"method": method})
    assert r.status_code == 200
    body = r.json()
    return body, {"Authorization": f"Bearer {body['token']}"}


def _next_batch(client, auth):
    r = client.post("/api/batch/next", headers=auth)
    assert r.status_code == 200
    return r.json()


class TestEnroll:
    def test_returns_token_and_limits(self, client):
        body, _ = _enroll(client)
        assert body["method"] == "btc"
        assert body["max_batches"] == 2
        assert body["token"]

    def test_unknown_method_rejected(self, client):
        r = client.post("/api/enroll", json={"method": "abx"})
        assert r.status_code == 422


class TestAuth:
    def test_missing_token(self, client):
        assert client.post("/api/batch/next").status_code == 401

    def test_bogus_token(self, client):
        r = client.post("/api/batch/next",
                        headers={"Authorization": "Bearer nope"})
        assert r.status_code == 401


class TestBatches:
    def test_questions_fully_resolved(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        assert len(batch["questions"]) == 28
        q = batch["questions"][0]
        assert q["left_url"].startswith("/assets/")
        assert q["pivot_url"].endswith(".png")
        assert q["flicker_hz"] == 10.0 and q["zoom_factor"] == 2.0
        assert q["toggle_required"] is False

    def test_ptc_method_parameters(self, client):
        _, auth = _enroll(client, "ptc")
        q = _next_batch(client, auth)["questions"][0]
        assert q["toggle_required"] is True
        assert q["flicker_hz"] == 0.0

    def test_limit_maps_to_403(self, client):
        _, auth = _enroll(client)
        _next_batch(client, auth)
        _next_batch(client, auth)
        assert client.post("/api/batch/next", headers=auth).status_code == 403

    def test_study_complete_maps_to_409(self, client):
        for _ in range(2):
            _, auth = _enroll(client)
            _next_batch(client, auth)
            _next_batch(client, auth)
        _, auth = _enroll(client)
        assert client.post("/api/batch/next", headers=auth).status_code == 409

    def test_triplet_assets_endpoint(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        tid = batch["questions"][3]["triplet_id"]
        r = client.get(f"/api/triplet/{tid}/assets", headers=auth)
        assert r.status_code == 200
        assert r.json()["triplet_id"] == tid

    def test_unknown_triplet_404(self, client):
        _, auth = _enroll(client)
        assert client.get("/api/triplet/bogus/assets",
                          headers=auth).status_code == 404


class TestResponses:
    def _payload(self, batch, i=0, **kw):
        body = {
            "triplet_id": batch["questions"][i]["triplet_id"],
            "batch_id": batch["batch_id"],
            "choice": "left",
            "response_time_ms": 850.0,
        }
        body.update(kw)
        return body

    def test_accepted(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        r = client.post("/api/response", headers=auth,
                        json=self._payload(batch))
        assert r.status_code == 200
        assert r.json() == {"accepted": True, "duplicate": False}

    def test_duplicate_flagged_not_errored(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        payload = self._payload(batch)
        client.post("/api/response", headers=auth, json=payload)
        r = client.post("/api/response", headers=auth, json=payload)
        assert r.status_code == 200
        assert r.json()["duplicate"] is True

    def test_conflicting_answer_409(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        client.post("/api/response", headers=auth,
                    json=self._payload(batch, choice="left"))
        r = client.post("/api/response", headers=auth,
                        json=self._payload(batch, choice="right"))
        assert r.status_code == 409

    def test_unknown_choice_422(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        r = client.post("/api/response", headers=auth,
                        json=self._payload(batch, choice="middle"))
        assert r.status_code == 422

    def test_ptc_toggle_gate_422(self, client):
        _, auth = _enroll(client, "ptc")
        batch = _next_batch(client, auth)
        r = client.post("/api/response", headers=auth,
                        json=self._payload(batch, toggle_count=0))
        assert r.status_code == 422
        r = client.post("/api/response", headers=auth,
                        json=self._payload(batch, toggle_count=1))
        assert r.status_code == 200

    def test_foreign_batch_422(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        r = client.post("/api/response", headers=auth,
                        json=self._payload(batch, batch_id="btc-99"))
        assert r.status_code == 422


class TestExport:
    def test_requires_admin_token(self, client):
        assert client.get("/api/export").status_code == 401

    def test_csv_payload(self, client):
        _, auth = _enroll(client)
        batch = _next_batch(client, auth)
        client.post("/api/response", headers=auth,
                    json=TestResponses()._payload(batch))
        r = client.get("/api/export", params={"token": "admin-secret"})
        assert r.status_code == 200
        assert "triplet_id,batch_id" in r.text
        assert batch["batch_id"] in r.text


def test_study_meta(client):
    r = client.get("/api/study")
    assert r.status_code == 200
    body = r.json()
    assert sorted(body["methods"]) == ["btc", "ptc"]
    assert body["batch_sizes"] == {"btc": 28, "ptc": 28}
