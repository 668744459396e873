"""HTTP surface: inline documents in, analysis bundles out."""

import pytest
from fastapi.testclient import TestClient

from soekit.cycledata import history_metadata_dict, write_history
from soekit.service import app

from synth import synth_history

import io


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def battery_payload(h):
    buf = io.StringIO()
    meta = history_metadata_dict(h)
    write_history(h, buf, io.StringIO())
    return {"telemetry": buf.getvalue(), "metadata": meta}


@pytest.fixture(scope="module")
def two_battery_request():
    return {
        "batteries": [
            battery_payload(synth_history("SRV01", n_cycles=10, seed=3)),
            battery_payload(synth_history("SRV02", n_cycles=8, seed=5, soe_start=0.8)),
        ],
        "config": {"integration": "left", "significance": 0.05, "clean": True},
    }


def test_healthz(client):
    body = client.get("/healthz").json()
    assert body["status"] == "ok"


def test_analyze(client, two_battery_request):
    resp = client.post("/analyze", json=two_battery_request)
    assert resp.status_code == 200
    body = resp.json()
    assert [r["battery_id"] for r in body["reports"]] == ["SRV01", "SRV02"]
    assert body["matrix"]["n_entries"] == 2
    assert body["failures"] == []
    rep = body["reports"][0]
    assert rep["n_cycles"] == 9  # first cycle cleaned
    assert rep["linear_trend"]["verdict"] in ("linear", "nonlinear", "inconclusive")


def test_analyze_isolates_bad_document(client, two_battery_request):
    req = {
        "batteries": two_battery_request["batteries"]
        + [{"telemetry": "garbage", "metadata": {"battery_id": "BAD"}}],
        "config": two_battery_request["config"],
    }
    body = client.post("/analyze", json=req).json()
    assert len(body["reports"]) == 2
    assert len(body["failures"]) == 1
    assert body["failures"][0]["source"] == "BAD"


def test_analyze_all_bad_is_422(client):
    req = {"batteries": [{"telemetry": "junk", "metadata": {}}]}
    assert client.post("/analyze", json=req).status_code == 422


def test_summary(client, two_battery_request):
    body = client.post("/summary", json=two_battery_request).json()
    assert "SRV01" in body["text"]
    assert len(body["rows"]) == 2
    assert body["rows"][0]["battery"] == "SRV01"


def test_plotdata_trajectory(client, two_battery_request):
    req = {**two_battery_request, "kind": "trajectory"}
    body = client.post("/plotdata", json=req).json()
    assert len(body["files"]) == 1
    assert body["files"][0]["name"] == "trajectory.csv"
    assert body["files"][0]["content"].startswith("series_id,t,value\n")


def test_plotdata_comparison_requires_factor(client, two_battery_request):
    req = {**two_battery_request, "kind": "comparison"}
    assert client.post("/plotdata", json=req).status_code == 422


def test_mk_endpoint(client):
    body = client.post("/trend/mann-kendall", json={"values": [1, 2, 3, 4, 5]}).json()
    assert body["s"] == 10
    assert body["p_value"] == pytest.approx(0.027486336111510353, rel=1e-12)
    assert body["classification"] == "trend-present"


def test_mk_endpoint_rejects_short_series(client):
    resp = client.post("/trend/mann-kendall", json={"values": [1, 2]})
    assert resp.status_code == 422


def test_fit_endpoint(client):
    body = client.post("/trend/fit", json={"values": [1.0, 0.0, 1.0], "t": [0, 1, 2]}).json()
    assert body["slope"] == pytest.approx(0.0, abs=1e-15)
    assert body["intercept"] == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_fit_endpoint_default_t(client):
    values = [0.9 - 0.001 * t for t in range(1, 11)]
    body = client.post("/trend/fit", json={"values": values}).json()
    assert body["slope"] == pytest.approx(-0.001, rel=1e-9)


def test_analyze_with_segment_overrides(client):
    h = synth_history("SRV03", n_cycles=20, seed=9)
    cond = {
        "ambient_temp_C": 24.0, "discharge_current_A": 2.0,
        "cutoff_voltage_V": 2.7, "charge_current_A": 1.0,
    }
    req = {
        "batteries": [battery_payload(h)],
        "config": {
            "segment_overrides": {
                "SRV03": [
                    {"label": "a", "first_cycle": 0, "last_cycle": 9, "conditions": cond},
                    {"label": "b", "first_cycle": 10, "last_cycle": 19, "conditions": cond},
                ]
            }
        },
    }
    body = client.post("/analyze", json=req).json()
    assert [r["series_id"] for r in body["reports"]] == ["SRV03:a", "SRV03:b"]
