import numpy as np
import pytest
from fastapi.testclient import TestClient

from ivos.backends import BackendNoise, synthetic_backends
from ivos.core import default_config
from ivos.engine import StepTimer, run_simulated_session
from ivos.harness.dataset import decode_label_png, encode_label_png
from ivos.harness.service import create_app
from ivos.synthlab import bundled_scene, render_scene


def _client(**kwargs):
    return TestClient(create_app(**kwargs))


def _prompt_payload(prompts):
    return {
        "frame_index": prompts.frame_index,
        "points": [{"x": p.x, "y": p.y, "polarity": p.polarity,
                    "object_id": p.object_id} for p in prompts.points],
        "boxes": [{"object_id": oid, "x_min": b.x_min, "y_min": b.y_min,
                   "x_max": b.x_max, "y_max": b.y_max}
                  for oid, b in sorted(prompts.boxes.items())],
    }


def replay_session_through_api(scene_name, cfg, noise, seed, client=None):
    """Run the simulator in-process, then replay its prompt stream through
    the HTTP API. Returns (in-process PNG bytes per frame, API PNG bytes)."""
    frames, truth = render_scene(bundled_scene(scene_name))
    backends = synthetic_backends(truth, frames, noise, seed=seed)
    session, _tables = run_simulated_session(
        frames, truth.masks, cfg, backends, StepTimer(),
        prompt_stream_tag="api-parity")
    local_pngs = [encode_label_png(m.labels) for m in session.masks]

    own_client = client is None
    client = client or _client()
    doc = client.post("/sessions", json={
        "scene": scene_name, "session_seed": seed,
        "noise": {"sigma": noise.sigma, "drift": noise.drift,
                  "box_edge": noise.box_edge},
        "config": cfg.to_dict(),
    }).json()
    sid = doc["session_id"]
    for record in session.records:
        resp = client.post(f"/sessions/{sid}/rounds",
                           json=_prompt_payload(record.prompts))
        assert resp.status_code == 200, resp.text
    api_pngs = []
    for t in range(session.num_frames):
        resp = client.get(f"/sessions/{sid}/masks/{t}")
        assert resp.headers["content-type"] == "image/png"
        api_pngs.append(resp.content)
    if own_client:
        client.close()
    return local_pngs, api_pngs


@pytest.fixture(scope="module")
def client():
    with _client() as c:
        yield c


@pytest.fixture()
def crossing_session(client):
    doc = client.post("/sessions", json={"scene": "crossing"}).json()
    return doc


def test_create_session_on_bundled_scene(crossing_session):
    assert crossing_session["num_frames"] == 40
    assert crossing_session["width"] == 128
    assert crossing_session["object_ids"] == [1, 2]
    assert crossing_session["reference"] is True


def test_unknown_scene_404(client):
    assert client.post("/sessions", json={"scene": "nope"}).status_code == 404


def test_unknown_session_404(client):
    assert client.get("/sessions/ghost/frames").status_code == 404
    assert client.post("/sessions/ghost/rounds",
                       json={"frame_index": 0, "points": []}).status_code == 404


def test_frame_image_is_png(client, crossing_session):
    sid = crossing_session["session_id"]
    resp = client.get(f"/sessions/{sid}/frames/0/image")
    assert resp.status_code == 200
    assert resp.content[:8] == b"\x89PNG\r\n\x1a\n"
    assert client.get(f"/sessions/{sid}/frames/999/image").status_code == 404


def test_malformed_prompt_payload_422(client, crossing_session):
    sid = crossing_session["session_id"]
    bad = {"frame_index": 0,
           "points": [{"x": 1.0, "y": 2.0, "polarity": "sideways",
                       "object_id": 1}]}
    assert client.post(f"/sessions/{sid}/rounds", json=bad).status_code == 422
    unknown_obj = {"frame_index": 0,
                   "points": [{"x": 1.0, "y": 2.0, "polarity": "positive",
                               "object_id": 9}]}
    assert client.post(f"/sessions/{sid}/rounds",
                       json=unknown_obj).status_code == 422
    empty = {"frame_index": 0, "points": []}
    assert client.post(f"/sessions/{sid}/rounds",
                       json=empty).status_code == 422


def _round_payload(truth, frame, object_id=2):
    from ivos.interaction import sample_positive_points
    mask = truth.visible_mask(object_id, frame)
    pts, _ = sample_positive_points(mask, 8, object_id)
    box = truth.visible_box(object_id, frame)
    return {
        "frame_index": frame,
        "points": [{"x": p.x, "y": p.y, "polarity": "positive",
                    "object_id": object_id} for p in pts]
        + [{"x": 2.0, "y": 2.0, "polarity": "negative",
            "object_id": object_id}],
        "boxes": [{"object_id": object_id, "x_min": box.x_min,
                   "y_min": box.y_min, "x_max": box.x_max,
                   "y_max": box.y_max}],
    }


def test_submit_round_masks_retrievable(client, crossing_session):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = crossing_session["session_id"]
    payload = _round_payload(truth, 0)
    doc = client.post(f"/sessions/{sid}/rounds", json=payload).json()
    assert doc["round"] == 1
    assert doc["interacted"] == [0]
    assert doc["suggestion"] is not None and doc["suggestion"] != 0
    assert doc["mean_jf"] is not None
    for t in (0, 10, 39):
        labels = decode_label_png(
            client.get(f"/sessions/{sid}/masks/{t}").content)
        assert labels.shape == (128, 128)
    # object 2 was prompted at a frame where it is visible: round-1 full
    # sweep produces a mask for it at frame 0
    labels0 = decode_label_png(client.get(f"/sessions/{sid}/masks/0").content)
    assert (labels0 == 2).any()


def test_box_only_round_accepted(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={"scene": "crossing"}).json()["session_id"]
    box = truth.visible_box(2, 0)
    payload = {"frame_index": 0, "points": [],
               "boxes": [{"object_id": 2, "x_min": box.x_min,
                          "y_min": box.y_min, "x_max": box.x_max,
                          "y_max": box.y_max}]}
    resp = client.post(f"/sessions/{sid}/rounds", json=payload)
    assert resp.status_code == 200, resp.text
    labels = decode_label_png(client.get(f"/sessions/{sid}/masks/0").content)
    assert (labels == 2).any()


def test_repeat_frame_conflict(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={"scene": "crossing"}).json()["session_id"]
    payload = _round_payload(truth, 5)
    assert client.post(f"/sessions/{sid}/rounds", json=payload).status_code == 200
    assert client.post(f"/sessions/{sid}/rounds", json=payload).status_code == 409


def test_scores_and_suggestion_reference_mode(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={"scene": "crossing"}).json()["session_id"]
    client.post(f"/sessions/{sid}/rounds", json=_round_payload(truth, 0))
    scores = client.get(f"/sessions/{sid}/scores").json()
    assert scores["basis"] == "reference-jf"
    assert len(scores["jf"]) == 40
    sug = client.get(f"/sessions/{sid}/suggestion").json()
    table_argmin = int(np.argmin(scores["jf"]))
    assert sug["frame_index"] == table_argmin
    assert sug["basis"] == "reference-jf"


def test_live_mode_confidence_suggestion(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={"scene": "crossing",
                                         "reference": False}).json()["session_id"]
    client.post(f"/sessions/{sid}/rounds", json=_round_payload(truth, 0))
    scores = client.get(f"/sessions/{sid}/scores").json()
    assert scores["basis"] == "confidence"
    assert len(scores["confidence"]) == 40
    sug = client.get(f"/sessions/{sid}/suggestion").json()
    assert sug["basis"] == "confidence"
    assert sug["frame_index"] != 0


def test_ledger_endpoint(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={"scene": "crossing"}).json()["session_id"]
    client.post(f"/sessions/{sid}/rounds", json=_round_payload(truth, 0))
    ledger = client.get(f"/sessions/{sid}/ledger").json()
    assert len(ledger["rounds"]) == 1
    row = ledger["rounds"][0]
    assert row["round"] == 1 and row["frame_index"] == 0
    assert "2" in row["infer_time"]


def test_round_budget_enforced(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={
        "scene": "crossing", "config": {"num_rounds": 1}}).json()["session_id"]
    client.post(f"/sessions/{sid}/rounds", json=_round_payload(truth, 0))
    resp = client.post(f"/sessions/{sid}/rounds",
                       json=_round_payload(truth, 1))
    assert resp.status_code == 409


def test_progress_stream_events(client):
    _frames, truth = render_scene(bundled_scene("crossing"))
    sid = client.post("/sessions", json={"scene": "crossing"}).json()["session_id"]
    client.post(f"/sessions/{sid}/rounds", json=_round_payload(truth, 0))
    events = []
    with client.websocket_connect(f"/sessions/{sid}/progress") as ws:
        while True:
            ev = ws.receive_json()
            events.append(ev)
            if ev["type"] == "round_end":
                break
    assert events[0]["type"] == "round_start"
    frame_events = [e for e in events if e["type"] == "frame"]
    assert {e["frame_index"] for e in frame_events} == set(range(40))
    assert events[-1]["suggestion"] is not None
    seqs = [e["seq"] for e in events]
    assert seqs == sorted(seqs)


def test_config_override_rejected_when_invalid(client):
    resp = client.post("/sessions", json={"scene": "crossing",
                                          "config": {"num_rounds": 0}})
    assert resp.status_code == 422
    resp = client.post("/sessions", json={"scene": "crossing",
                                          "config": {"bogus_field": 1}})
    assert resp.status_code == 422


def test_api_parity_small():
    cfg = default_config().with_overrides(num_rounds=2, iri_count=0,
                                          rng_seed=12)
    local, api = replay_session_through_api(
        "static", cfg, BackendNoise(sigma=0.5, drift=0.5, box_edge=1.0),
        seed=12)
    assert local == api


def test_upload_session_with_remote_backends(monkeypatch, tmp_path):
    """Uploaded-frame live sessions run against wire-protocol backends."""
    import io
    import zipfile

    from ivos import backends as backends_mod
    from ivos.harness.dataset import encode_frame_png
    from ivos.segmentation import SyntheticSegmenter
    from ivos.tracking import SyntheticBoxTracker, SyntheticPointTracker
    from ivos.wire import WireServer

    frames, truth = render_scene(bundled_scene("static"))
    servers = [WireServer(SyntheticPointTracker(truth), "point").start(),
               WireServer(SyntheticBoxTracker(truth), "box").start(),
               WireServer(SyntheticSegmenter(truth, frames), "segmenter").start()]
    monkeypatch.setenv(backends_mod.ENV_POINT, servers[0].endpoint)
    monkeypatch.setenv(backends_mod.ENV_BOX, servers[1].endpoint)
    monkeypatch.setenv(backends_mod.ENV_SEGMENTER, servers[2].endpoint)
    try:
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            for t in range(frames.shape[0]):
                zf.writestr(f"{t:05d}.png", encode_frame_png(frames[t]))
        with _client() as c:
            doc = c.put("/sessions/upload?object_count=2",
                        content=buf.getvalue()).json()
            assert doc["num_frames"] == 40
            assert doc["reference"] is False
            sid = doc["session_id"]
            resp = c.post(f"/sessions/{sid}/rounds",
                          json=_round_payload(truth, 0, object_id=1))
            assert resp.status_code == 200, resp.text
            labels = decode_label_png(
                c.get(f"/sessions/{sid}/masks/5").content)
            assert (labels == 1).any()
            scores = c.get(f"/sessions/{sid}/scores").json()
            assert scores["basis"] == "confidence"
    finally:
        for s in servers:
            s.stop()


def test_upload_without_remote_backends_rejected(monkeypatch):
    from ivos import backends as backends_mod

    for var in (backends_mod.ENV_POINT, backends_mod.ENV_BOX,
                backends_mod.ENV_SEGMENTER):
        monkeypatch.delenv(var, raising=False)
    import io
    import zipfile

    from ivos.harness.dataset import encode_frame_png

    with _client() as c:
        resp = c.put("/sessions/upload", content=b"not a zip")
        assert resp.status_code == 422
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w") as zf:
            zf.writestr("00000.png", encode_frame_png(
                np.zeros((8, 8, 3), dtype=np.uint8)))
        # a valid zip with no remote backends configured is a client error
        resp = c.put("/sessions/upload", content=buf.getvalue())
        assert resp.status_code == 400
        assert "remote backends" in resp.json()["detail"]


def test_dataset_sequence_sessions(tmp_path):
    from ivos.harness.dataset import export_dataset
    from ivos.synthlab import standard_suite_specs

    index = export_dataset(
        {"linear": standard_suite_specs()["linear"]}, tmp_path)
    with _client(dataset_index=index) as c:
        doc = c.post("/sessions", json={"sequence": "linear"}).json()
        assert doc["num_frames"] == 40
        _frames, truth = render_scene(bundled_scene("linear"))
        resp = c.post(f"/sessions/{doc['session_id']}/rounds",
                      json=_round_payload(truth, 0, object_id=1))
        assert resp.status_code == 200
