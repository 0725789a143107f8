"""End-to-end CLI pipeline on a tiny synthetic dataset."""
import json
from pathlib import Path

import numpy as np
import pytest

from mfseg.cli import main


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cliwork") / "ds"
    code = run(["synth", "--out", str(out), "--count", "14", "--dims", "64x32",
                "--seed", "7", "--extent-min", "4", "--extent-max", "6"])
    assert code == 0
    return out


def test_synth_outputs_and_run_json(dataset_dir):
    manifest = dataset_dir / "manifest.json"
    assert manifest.is_file()
    run_doc = json.loads((dataset_dir / "run.json").read_text())
    assert run_doc["command"] == "synth"
    assert run_doc["config"]["seed"] == 7
    assert "manifest.json" in run_doc["outputs"]
    assert len([k for k in run_doc["outputs"] if k.endswith(".png")]) == 14


def test_refuses_nonempty_out_without_force(dataset_dir, tmp_path, capsys):
    code = run(["synth", "--out", str(dataset_dir), "--count", "2"])
    assert code == 1
    assert "error: FileExistsError" in capsys.readouterr().err
    code = run(["synth", "--out", str(dataset_dir), "--count", "14", "--dims", "64x32",
                "--seed", "7", "--extent-min", "4", "--extent-max", "6", "--force"])
    assert code == 0


def test_maskgen_single_entry(dataset_dir, tmp_path):
    manifest = dataset_dir / "manifest.json"
    doc = json.loads(manifest.read_text())
    one = tmp_path / "one.json"
    one.write_text(json.dumps({"image_dims": doc["image_dims"],
                               "entries": [dict(doc["entries"][0],
                                                image=str(dataset_dir / doc["entries"][0]["image"]))]}))
    out = tmp_path / "masks"
    code = run(["maskgen", "--manifest", str(one), "--out", str(out),
                "--shape", "square", "--extent", "5"])
    assert code == 0
    files = list(out.glob("*_square.png"))
    assert len(files) == 1
    assert files[0].name == f"{doc['entries'][0]['id']}_square.png"


def test_train_rejects_backbone_with_unet(dataset_dir, tmp_path, capsys):
    code = run(["train", "--manifest", str(dataset_dir / "manifest.json"),
                "--out", str(tmp_path / "t"), "--arch", "unet", "--backbone", "resnet18",
                "--mask-shape", "round", "--dims", "64x32", "--epochs", "1"])
    assert code == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ValueError:")
    assert "backbone" in err


def test_unknown_flag_exits_2(dataset_dir):
    with pytest.raises(SystemExit) as exc:
        run(["synth", "--out", "x", "--bogus", "1"])
    assert exc.value.code == 2


@pytest.fixture(scope="module")
def trained_dir(dataset_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cliwork2") / "trained"
    code = run(["train", "--manifest", str(dataset_dir / "manifest.json"),
                "--out", str(out), "--arch", "unet", "--depth", "2", "--base-width", "4",
                "--mask-shape", "round", "--dims", "64x32", "--epochs", "2",
                "--patience", "0", "--val-fraction", "0.2", "--lr", "0.002",
                "--batch-size", "4", "--seed", "7"])
    assert code == 0
    return out


def test_train_artifacts(trained_dir):
    assert (trained_dir / "checkpoint.npz").is_file()
    hist_lines = (trained_dir / "history.jsonl").read_text().strip().split("\n")
    assert len(hist_lines) == 2
    rec = json.loads(hist_lines[0])
    assert {"epoch", "train_loss", "val_loss", "val_dsc", "val_iou"} <= set(rec)
    run_doc = json.loads((trained_dir / "run.json").read_text())
    assert run_doc["config"]["lr"] == 0.002


def test_eval_checkpoint_with_roc_and_overlays(dataset_dir, trained_dir, tmp_path):
    out = tmp_path / "eval"
    code = run(["eval", "--manifest", str(dataset_dir / "manifest.json"),
                "--checkpoint", str(trained_dir / "checkpoint.npz"),
                "--out", str(out), "--mask-shape", "round", "--dims", "64x32",
                "--threshold", "0.5", "--roc", "--overlays"])
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert 0.0 <= metrics["mean_dsc"] <= 1.0
    assert metrics["roc"] is not None and 0.0 <= metrics["roc"]["auc"] <= 1.0
    assert (out / "roc.png").is_file()
    assert len(list((out / "overlays").glob("*.png"))) == 14


def test_cv_report_pipeline_and_determinism(dataset_dir, tmp_path):
    common = ["cv", "--manifest", str(dataset_dir / "manifest.json"),
              "--arch", "unet", "--depth", "2", "--base-width", "4",
              "--mask-shape", "round", "--dims", "64x32", "--epochs", "2",
              "--patience", "0", "--k", "2", "--seed", "7", "--n-train", "10",
              "--lr", "0.002", "--batch-size", "4"]
    out1, out2 = tmp_path / "cv1", tmp_path / "cv2"
    assert run(common + ["--out", str(out1)]) == 0
    assert run(common + ["--out", str(out2)]) == 0
    j1 = json.loads((out1 / "cv_result.json").read_text())
    assert j1["model"] == "unet" and j1["mask_shape"] == "round"
    assert len(j1["cv"]["per_fold"]) == 2
    assert (out1 / "fold0.npz").is_file() and (out1 / "fold1.npz").is_file()
    # identical config + seed -> byte-identical metric JSON
    assert (out1 / "cv_result.json").read_bytes() == (out2 / "cv_result.json").read_bytes()

    rep = tmp_path / "rep"
    code = run(["report", "--out", str(rep), "--cv", str(out1 / "cv_result.json")])
    assert code == 0
    table = (rep / "results.csv").read_text()
    lines = table.strip().split("\n")
    assert lines[0].startswith("model,mask_shape")
    assert lines[1].split(",")[0] == "unet"


def test_config_file_precedence(dataset_dir, tmp_path):
    cfg = tmp_path / "conf.json"
    cfg.write_text(json.dumps({"count": 3, "synth.dims": "32x16",
                               "extent-min": 1.5, "extent-max": 2.5}))
    out = tmp_path / "from_config"
    code = run(["synth", "--out", str(out), "--config", str(cfg), "--count", "4"])
    assert code == 0
    run_doc = json.loads((out / "run.json").read_text())
    assert run_doc["config"]["count"] == 4  # explicit flag wins
    assert run_doc["config"]["dims"] == [32, 16]  # config file beats default
    assert len([k for k in run_doc["outputs"] if k.endswith(".png")]) == 4


def test_missing_manifest_is_single_error_line(tmp_path, capsys):
    code = run(["maskgen", "--manifest", str(tmp_path / "nope.json"),
                "--out", str(tmp_path / "m"), "--mask-shape", "round"])
    assert code == 1
    err = capsys.readouterr().err.strip().split("\n")
    assert len(err) == 1 and err[0].startswith("error: ")
