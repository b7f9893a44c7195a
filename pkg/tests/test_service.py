import io
import json
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient

from flimsod.imgcore import save_mask
from flimsod.markers import parse_markers, serialize_markers
from flimsod.pipeline import load_config
from flimsod.service import create_app, replay_log

from synthgen import make_dataset, scripted_markers, suite_postproc_config


@pytest.fixture()
def server(tmp_path):
    images = tmp_path / "images"
    markers = tmp_path / "markers"
    gt = tmp_path / "gt"
    for d in (images, markers, gt):
        d.mkdir()
    scenes = make_dataset(5, seed=42, size=64)
    from PIL import Image as PILImage
    for s in scenes:
        arr = np.round(s.image.data * 255).astype(np.uint8)
        PILImage.fromarray(arr, mode="RGB").save(images / f"{s.image_id}.png")
        save_mask(s.gt, gt / f"{s.image_id}.png")
    for s in scenes[:4]:
        ms = scripted_markers(s)
        (markers / f"{s.image_id}.txt").write_text(
            serialize_markers(ms.images[s.image_id]))
    arch = {"epsilon": 1e-4,
            "blocks": [{"kernel_size": 3, "dilation": 1, "kernels_per_marker": 1,
                        "pooling": {"type": "max", "size": 3, "stride": 2}}]}
    (tmp_path / "arch.json").write_text(json.dumps(arch))
    config = {
        "architecture": "arch.json",
        "decoder": "lm",
        "block": 1,
        "seed": 3,
        "model": "model.json",
        "postproc": suite_postproc_config().to_dict(),
        "dataset": {"images_dir": "images", "markers_dir": "markers", "gt_dir": "gt"},
        "state_dir": "state",
    }
    (tmp_path / "config.json").write_text(json.dumps(config))
    cfg = load_config(tmp_path / "config.json")
    app = create_app(cfg)
    return TestClient(app), tmp_path, scenes


def wait_for_job(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/api/jobs/{job_id}").json()
        if job["phase"] in ("done", "failed"):
            return job
        time.sleep(0.05)
    raise TimeoutError("training job did not finish")


class TestImages:
    def test_list_images(self, server):
        client, root, scenes = server
        resp = client.get("/api/images")
        assert resp.status_code == 200
        rows = resp.json()
        assert [r["id"] for r in rows] == sorted(s.image_id for s in scenes)
        assert all(r["width"] == 64 and r["height"] == 64 for r in rows)

    def test_get_image_png(self, server):
        client, root, scenes = server
        resp = client.get(f"/api/images/{scenes[0].image_id}.png")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert resp.content[:4] == b"\x89PNG"

    def test_unknown_image(self, server):
        client, _, _ = server
        assert client.get("/api/images/nope.png").status_code == 404


class TestMarkers:
    def test_put_get_round_trip_byte_identical(self, server):
        client, root, scenes = server
        iid = scenes[4].image_id
        ms = scripted_markers(scenes[4])
        text = serialize_markers(ms.images[iid])
        put = client.put(f"/api/markers/{iid}", content=text.encode())
        assert put.status_code == 200
        assert put.content == text.encode()
        got = client.get(f"/api/markers/{iid}")
        assert got.content == text.encode()
        assert parse_markers(got.text) == ms

    def test_put_validates_dims(self, server):
        client, root, scenes = server
        iid = scenes[0].image_id
        bad = f"FLIM-MARKERS 1\n{iid} 99 99\n1 1 1 1\n"
        assert client.put(f"/api/markers/{iid}", content=bad.encode()).status_code == 422

    def test_put_validates_syntax(self, server):
        client, root, scenes = server
        iid = scenes[0].image_id
        assert client.put(f"/api/markers/{iid}", content=b"junk").status_code == 422

    def test_missing_markers_404(self, server):
        client, root, scenes = server
        assert client.get(f"/api/markers/{scenes[4].image_id}").status_code == 404


class TestTrainingAndInfer:
    def test_train_job_and_infer(self, server):
        client, root, scenes = server
        job = client.post("/api/train").json()
        assert job["phase"] in ("queued", "training")
        done = wait_for_job(client, job["id"])
        assert done["phase"] == "done"
        assert (root / "model.json").exists()
        resp = client.post(f"/api/infer/{scenes[0].image_id}?decoder=lm&block=1")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        assert "X-Saliency-Max" in resp.headers

    def test_infer_without_model_409(self, server):
        client, root, scenes = server
        assert client.post(f"/api/infer/{scenes[0].image_id}").status_code == 409

    def test_concurrent_train_rejected(self, server):
        client, _, _ = server
        first = client.post("/api/train").json()
        second = client.post("/api/train")
        if second.status_code == 409:
            assert "Retry-After" in second.headers
        else:
            # first job may already have finished on a fast machine
            assert wait_for_job(client, first["id"])["phase"] == "done"
        wait_for_job(client, first["id"])


class TestSelection:
    def test_get_selection_initializes(self, server):
        client, _, _ = server
        state = client.get("/api/selection").json()
        assert len(state["training_set"]) == 1
        assert len(state["pool"]) == 3  # marked images only, minus the initial pick
        assert state["ranked_worst"][0]["f_beta"] <= state["ranked_worst"][-1]["f_beta"]

    def test_step_accept_and_reject_visible(self, server):
        client, _, _ = server
        state = client.get("/api/selection").json()
        t0 = state["training_set"]
        candidate = state["ranked_worst"][0]["image_id"]
        after = client.post("/api/selection/step",
                            json={"accept": True, "candidate": candidate}).json()
        assert candidate in after["training_set"]
        assert len(after["training_set"]) == len(t0) + 1
        probation = candidate
        candidate2 = after["ranked_worst"][0]["image_id"]
        reverted = client.post("/api/selection/step",
                               json={"accept": False, "candidate": candidate2}).json()
        assert probation not in reverted["training_set"]
        assert candidate2 in reverted["training_set"]
        # revert also visible through the session alias endpoint
        alias = client.get("/api/session").json()
        assert alias["training_set"] == reverted["training_set"]

    def test_step_rejects_unknown_candidate(self, server):
        client, _, _ = server
        client.get("/api/selection")
        resp = client.post("/api/selection/step",
                           json={"accept": True, "candidate": "nope"})
        assert resp.status_code == 422


class TestMutationLog:
    def test_replay_reproduces_state(self, server):
        client, root, scenes = server
        iid = scenes[4].image_id
        ms = scripted_markers(scenes[4])
        text = serialize_markers(ms.images[iid])
        client.put(f"/api/markers/{iid}", content=text.encode())
        state = client.get("/api/selection").json()
        candidate = state["ranked_worst"][0]["image_id"]
        after = client.post("/api/selection/step",
                            json={"accept": True, "candidate": candidate}).json()
        replay = replay_log(root / "state" / "mutations.jsonl")
        assert replay["markers"][iid] == text
        assert replay["session"]["training_set"] == after["training_set"]
        assert replay["session"]["pool"] == after["pool"]
        via_api = client.get("/api/state/replay").json()
        assert via_api == replay
