import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from flimsod.cli import main
from flimsod.imgcore import load_mask, load_saliency, save_mask
from flimsod.markers import serialize_markers

from synthgen import make_dataset, scripted_markers, suite_postproc_config


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Small on-disk dataset: 6 images, markers for the first 3, GT for all."""
    root = tmp_path_factory.mktemp("ws")
    images = root / "images"
    markers = root / "markers"
    gt = root / "gt"
    for d in (images, markers, gt):
        d.mkdir()
    scenes = make_dataset(6, seed=42, size=96)
    for s in scenes:
        from PIL import Image as PILImage
        arr = np.round(s.image.data * 255).astype(np.uint8)
        PILImage.fromarray(arr, mode="RGB").save(images / f"{s.image_id}.png")
        save_mask(s.gt, gt / f"{s.image_id}.png")
    for s in scenes[:3]:
        ms = scripted_markers(s)
        (markers / f"{s.image_id}.txt").write_text(
            serialize_markers(ms.images[s.image_id]))
    arch = {
        "epsilon": 1e-4,
        "blocks": [
            {"kernel_size": 3, "dilation": 1, "kernels_per_marker": 2,
             "pooling": {"type": "max", "size": 3, "stride": 2}},
            {"kernel_size": 3, "dilation": 1, "kernels_per_marker": 2,
             "pooling": {"type": "max", "size": 3, "stride": 2}},
        ],
    }
    (root / "arch.json").write_text(json.dumps(arch))
    config = {
        "architecture": "arch.json",
        "decoder": "lm",
        "block": 2,
        "beta_sq": 0.3,
        "seed": 7,
        "model": "model.json",
        "postproc": suite_postproc_config().to_dict(),
        "dataset": {"images_dir": "images", "markers_dir": "markers", "gt_dir": "gt"},
    }
    (root / "config.json").write_text(json.dumps(config))
    return root, scenes


class TestTrain:
    def test_train_writes_model_and_counts(self, workspace, capsys):
        root, scenes = workspace
        rc = main(["train", "--config", str(root / "config.json")])
        out = capsys.readouterr().out
        assert rc == 0
        assert (root / "model.json").exists()
        model = json.loads((root / "model.json").read_text())
        assert model["schema"] == "flim-model/1"
        # 3 images x (1 fg + 6 bg markers) x 2 kernels/marker
        assert "block 1: 42 kernels" in out
        m1 = 42
        expected = m1 * 9 * 3 + m1 * 9 * m1
        assert f"total parameters: {expected}" in out

    def test_missing_marker_dir(self, workspace, tmp_path, capsys):
        root, _ = workspace
        cfg = json.loads((root / "config.json").read_text())
        cfg["dataset"]["markers_dir"] = "nope"
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({**cfg, "architecture": str(root / "arch.json"),
                                   "dataset": {"images_dir": str(root / "images"),
                                               "markers_dir": str(tmp_path / "nope"),
                                               "gt_dir": str(root / "gt")}}))
        rc = main(["train", "--config", str(bad)])
        assert rc != 0
        assert "nope" in capsys.readouterr().err

    def test_deterministic_model_file(self, workspace, tmp_path):
        root, _ = workspace
        out1, out2 = tmp_path / "m1.json", tmp_path / "m2.json"
        assert main(["train", "--config", str(root / "config.json"),
                     "--out", str(out1)]) == 0
        assert main(["train", "--config", str(root / "config.json"),
                     "--out", str(out2)]) == 0
        h1 = hashlib.sha256(out1.read_bytes()).hexdigest()
        h2 = hashlib.sha256(out2.read_bytes()).hexdigest()
        assert h1 == h2


class TestInfer:
    def test_infer_writes_saliency_and_mask(self, workspace, tmp_path):
        root, scenes = workspace
        img = root / "images" / f"{scenes[4].image_id}.png"
        rc = main(["infer", "--config", str(root / "config.json"),
                   "--image", str(img), "--out-dir", str(tmp_path)])
        assert rc == 0
        sal_path = tmp_path / f"{scenes[4].image_id}_saliency.png"
        mask_path = tmp_path / f"{scenes[4].image_id}_mask.png"
        assert sal_path.exists() and mask_path.exists()
        sal = load_saliency(sal_path)
        assert sal.shape == (96, 96)
        mask = load_mask(mask_path)
        inter = (mask & scenes[4].gt).sum()
        assert inter / max(scenes[4].gt.sum(), 1) > 0.7

    def test_infer_deterministic_bytes(self, workspace, tmp_path):
        root, scenes = workspace
        img = root / "images" / f"{scenes[4].image_id}.png"
        hashes = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            assert main(["infer", "--config", str(root / "config.json"),
                         "--image", str(img), "--out-dir", str(out)]) == 0
            hashes.append(hashlib.sha256(
                (out / f"{scenes[4].image_id}_saliency.png").read_bytes()).hexdigest())
        assert hashes[0] == hashes[1]

    def test_unknown_decoder(self, workspace, tmp_path, capsys):
        root, scenes = workspace
        img = root / "images" / f"{scenes[4].image_id}.png"
        rc = main(["infer", "--config", str(root / "config.json"),
                   "--image", str(img), "--decoder", "zz", "--out-dir", str(tmp_path)])
        assert rc != 0

    def test_bp_without_weights_fails(self, workspace, tmp_path, capsys):
        root, scenes = workspace
        img = root / "images" / f"{scenes[4].image_id}.png"
        rc = main(["infer", "--config", str(root / "config.json"),
                   "--image", str(img), "--decoder", "bp", "--out-dir", str(tmp_path)])
        assert rc != 0
        assert "bp" in capsys.readouterr().err


class TestBpTraining:
    def test_train_with_bp_decoder_stores_weights(self, workspace, tmp_path):
        root, scenes = workspace
        cfg = json.loads((root / "config.json").read_text())
        cfg["decoder"] = "bp"
        cfg["architecture"] = str(root / "arch.json")
        cfg["dataset"] = {"images_dir": str(root / "images"),
                          "markers_dir": str(root / "markers"),
                          "gt_dir": str(root / "gt")}
        cfg["model"] = str(tmp_path / "bp_model.json")
        cfg_path = tmp_path / "bp_config.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(cfg_path)]) == 0
        model = json.loads((tmp_path / "bp_model.json").read_text())
        assert model["bp_weights"]["kind"] == "bp"
        assert len(model["bp_weights"]["values"]) == 42
        # and inference with bp now works
        img = root / "images" / f"{scenes[4].image_id}.png"
        assert main(["infer", "--config", str(cfg_path), "--image", str(img),
                     "--out-dir", str(tmp_path / "out")]) == 0


class TestEval:
    def test_identical_dirs(self, workspace, tmp_path, capsys):
        root, _ = workspace
        rc = main(["eval", "--pred-dir", str(root / "gt"),
                   "--gt-dir", str(root / "gt"),
                   "--out", str(tmp_path / "report.csv")])
        assert rc == 0
        lines = (tmp_path / "report.csv").read_text().splitlines()
        assert len(lines) == 7
        for line in lines[1:]:
            parts = line.split(",")
            assert float(parts[3]) == 1.0 and float(parts[4]) == 0.0

    def test_missing_prediction_listed(self, workspace, tmp_path, capsys):
        root, scenes = workspace
        preds = tmp_path / "preds"
        preds.mkdir()
        for s in scenes[:-1]:
            save_mask(s.gt, preds / f"{s.image_id}.png")
        rc = main(["eval", "--pred-dir", str(preds), "--gt-dir", str(root / "gt")])
        assert rc != 0
        assert scenes[-1].image_id in capsys.readouterr().err

    def test_json_report_matches_evaluate_set(self, workspace, tmp_path):
        from flimsod.evalsel import evaluate_set

        root, scenes = workspace
        rc = main(["eval", "--pred-dir", str(root / "gt"), "--gt-dir", str(root / "gt"),
                   "--out", str(tmp_path / "report.json")])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        pairs = [(s.image_id, s.gt, s.gt) for s in scenes]
        want = evaluate_set(pairs, 0.3)
        assert report["mean"] == want.mean


class TestSelect:
    def test_scripted_session(self, workspace, tmp_path, capsys):
        root, _ = workspace
        log = tmp_path / "history.jsonl"
        rc = main(["select", "--config", str(root / "config.json"),
                   "--script", "a,a", "--log", str(log)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "final training set" in out
        entries = [json.loads(l) for l in log.read_text().splitlines()]
        assert entries[0]["event"] == "init"
        assert len(entries) == 3
