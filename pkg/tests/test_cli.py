import csv
import json

import numpy as np
import pytest
from PIL import Image

from deglass.cli import ENV_CONFIG, UsageError, build_config, main, read_config_file
from deglass.synth.dataset import SynthConfig
from deglass.trainer import TrainConfig, load_checkpoint

from conftest import SMOKE


def smoke_flags(**extra):
    items = {**SMOKE, **extra}
    return [x for k, v in items.items() for x in ("--set", f"{k}={v}")]


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert main(["train-removal", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--mask-checkpoint", "--resume", "--variant", "--set", "--config"):
        assert flag in text


def test_usage_errors_exit_one(capsys):
    assert main([]) == 1
    assert main(["frobnicate"]) == 1
    assert main(["synth"]) == 1  # --out is required


def test_synth_ten_samples(tmp_path, capsys):
    out = tmp_path / "d"
    assert main(["synth", "--n", "10", "--size", "32", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["samples"]) == 10
    assert main(["synth", "--n", "10", "--size", "32", "--out", str(out)]) == 2


def test_infer_missing_checkpoint_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "removal_last.pt"
    img = tmp_path / "x.png"
    Image.fromarray(np.zeros((16, 16, 3), np.uint8)).save(img)
    assert main(["infer", "--checkpoint", str(missing), "--image", str(img)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_key_names_the_key(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--set", "n_samples=3"]) == 1
    assert "unknown config key: n_samples" in capsys.readouterr().err
    with pytest.raises(UsageError, match="unknown config key: train.wobble"):
        build_config(TrainConfig, "train", {"train.wobble": "1"})


def test_precedence_defaults_file_override(tmp_path):
    f = tmp_path / "c.conf"
    f.write_text("# comment\nlr = 3e-4\nbatch_size = 4\nsynth.n = 7\n")
    file_values = read_config_file(f)
    cfg = build_config(TrainConfig, "train", file_values, {"train.lr": "5e-4"})
    assert cfg.lr == 5e-4 and cfg.batch_size == 4 and cfg.epochs_mask == 30
    assert build_config(SynthConfig, "synth", file_values).n == 7
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"train": {"batch_size": 2}, "synth": {"n": 5}}))
    assert build_config(TrainConfig, "train", read_config_file(j)).batch_size == 2
    with pytest.raises(UsageError, match="bad value for batch_size"):
        build_config(TrainConfig, "train", {"batch_size": "many"})


def test_env_config_and_flag_precedence(tmp_path, monkeypatch):
    f = tmp_path / "c.conf"
    f.write_text("synth.n = 6\nsynth.image_size = 32\n")
    monkeypatch.setenv(ENV_CONFIG, str(f))
    assert main(["synth", "--out", str(tmp_path / "a")]) == 0
    assert len(json.loads((tmp_path / "a" / "manifest.json").read_text())["samples"]) == 6
    assert main(["synth", "--out", str(tmp_path / "b"), "--set", "n=4", "--n", "3"]) == 0
    assert len(json.loads((tmp_path / "b" / "manifest.json").read_text())["samples"]) == 3
    monkeypatch.setenv(ENV_CONFIG, str(tmp_path / "missing.conf"))
    assert main(["synth", "--out", str(tmp_path / "c")]) == 1


def test_end_to_end(small_dataset, tmp_path, capsys):
    before = {p: p.stat().st_mtime_ns for p in small_dataset.rglob("*")}
    run = tmp_path / "run"
    common = ["--data", str(small_dataset), "--out", str(run), *smoke_flags()]
    assert main(["train-mask", *common, "--epochs", "1"]) == 0
    mask = run / "mask_last.pt"
    assert load_checkpoint(mask).epoch == 1
    assert main(["train-removal", *common, "--epochs", "1", "--mask-checkpoint", str(mask)]) == 0
    removal = run / "removal_last.pt"
    assert main(["train-removal", *common, "--mask-checkpoint", str(tmp_path / "none.pt")]) == 2

    assert main(["eval", "--checkpoint", str(removal), "--data", str(small_dataset), "--out", str(run)]) == 0
    with (run / "eval_test.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    for key in ("iou_g", "iou_s", "l1_g", "l1_f", "psnr_f", "l1_input", "hash_removal"):
        assert rows[0][key] != ""
    assert main(["eval", "--checkpoint", str(mask), "--data", str(small_dataset), "--out", str(run)]) == 2

    img = tmp_path / "face.png"
    Image.fromarray(np.full((80, 80, 3), 128, np.uint8)).save(img)
    out = tmp_path / "clean.png"
    grid = tmp_path / "grid.png"
    assert main(["infer", "--checkpoint", str(removal), "--image", str(img), "--out", str(out),
                 "--debug-grid", str(grid)]) == 0
    assert Image.open(out).size == (64, 64) and Image.open(grid).size == (5 * 64, 64)
    assert {p: p.stat().st_mtime_ns for p in small_dataset.rglob("*")} == before


def test_ablate_mask_only(small_dataset, tmp_path, capsys):
    out = tmp_path / "abl"
    args = ["ablate", "--data", str(small_dataset), "--out", str(out), "--variant", "FULL,wo-da",
            "--seeds", "1", "--mask-only", *smoke_flags(epochs_mask=1)]
    assert main(args) == 0
    with (out / "ablation.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["variant"] for r in rows] == ["FULL", "WO_DA"]
    assert main(["ablate", "--data", str(small_dataset), "--variant", "bogus"]) == 1
    assert "unknown ablation variant" in capsys.readouterr().err
