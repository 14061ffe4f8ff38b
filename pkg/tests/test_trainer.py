import dataclasses
import math

import pytest
import torch

from deglass.data import TrainData
from deglass.trainer import (
    Checkpoint,
    TrainConfig,
    load_checkpoint,
    parameter_hash,
    save_checkpoint,
    train_mask_stage,
    train_removal_stage,
)


def test_config_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 1e-4 and (cfg.beta1, cfg.beta2) == (0.5, 0.999) and cfg.batch_size == 8
    assert (cfg.epochs_mask, cfg.epochs_removal) == (30, 80)
    assert (cfg.lambda_adv, cfg.lambda_mask, cfg.lambda_de_s, cfg.lambda_de_g) == (0.1, 1.0, 1.0, 1.0)


@pytest.mark.parametrize("bad", [dict(lr=0), dict(batch_size=-1), dict(lambda_adv=math.inf),
                                 dict(lambda_mask=math.nan), dict(beta1=1.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_config_hash_ignores_schedule_and_paths():
    a = TrainConfig()
    assert a.hash() == dataclasses.replace(a, epochs_mask=3, out_dir="x", data="y").hash()
    assert a.hash() != dataclasses.replace(a, lr=2e-4).hash()


def test_mask_smoke_run(mask_ckpt, smoke_cfg, tmp_path_factory):
    assert mask_ckpt.epoch == 2 and len(mask_ckpt.history) == 2
    row = mask_ckpt.history[-1]
    assert 0 <= row["val_iou_g"] <= 1 and 0 <= row["val_iou_s"] <= 1
    assert mask_ckpt.extra["final_train_bce"] < mask_ckpt.extra["initial_train_bce"]


def test_mask_checkpoint_files(smoke_cfg, small_data, tmp_path):
    cfg = dataclasses.replace(smoke_cfg, epochs_mask=1)
    ckpt = train_mask_stage(cfg, out_dir=tmp_path, data=small_data)
    for name in ("mask_last.pt", "mask_best.pt", "mask_losses.csv"):
        assert (tmp_path / name).exists()
    loaded = load_checkpoint(tmp_path / "mask_last.pt")
    assert loaded.config_hash == ckpt.config_hash and loaded.history == ckpt.history
    header = (tmp_path / "mask_losses.csv").read_text().splitlines()[0]
    assert header.startswith("epoch,loss,adv_d,adv_g,mask_g,mask_s")


def test_mask_training_is_reproducible(smoke_cfg, small_data, mask_ckpt):
    again = train_mask_stage(smoke_cfg, data=small_data)
    assert again.history == mask_ckpt.history


def test_checkpoint_round_trip_is_bit_exact(mask_ckpt, tmp_path):
    save_checkpoint(mask_ckpt, tmp_path / "c.pt")
    loaded = load_checkpoint(tmp_path / "c.pt")
    x = torch.rand(2, 3, 64, 64)
    a, b = mask_ckpt.mask_model().eval(), loaded.mask_model().eval()
    for p, q in zip(a(x), b(x)):
        assert torch.equal(p, q)


def test_removal_freezes_mask_stage(removal_run, mask_ckpt):
    ckpt, _ = removal_run
    before = parameter_hash(mask_ckpt.mask_model())
    assert ckpt.extra["mask_param_hash"] == before
    assert parameter_hash(ckpt.mask_model()) == before


def test_removal_updates_only_removal_parameters(smoke_cfg, small_data, mask_ckpt):
    cfg = dataclasses.replace(smoke_cfg, epochs_removal=1)
    ckpt = train_removal_stage(cfg, mask_ckpt, data=small_data)
    mask_names = set(ckpt.params["mask"].tensors)
    changed = {n for n, t in ckpt.params["mask"].tensors.items()
               if not torch.equal(t, mask_ckpt.params["mask"].tensors[n])}
    assert mask_names and not changed
    assert ckpt.params["removal"].tensors.keys().isdisjoint({f"mask.{n}" for n in mask_names})


def test_removal_smoke_descends(removal_run):
    ckpt, out = removal_run
    assert ckpt.history[-1]["loss"] < ckpt.history[0]["loss"]
    assert (out / "removal_last.pt").exists() and (out / "removal_losses.csv").exists()


def test_resume_matches_uninterrupted_run(smoke_cfg, small_data, mask_ckpt, removal_run, tmp_path):
    full, _ = removal_run
    half = train_removal_stage(dataclasses.replace(smoke_cfg, epochs_removal=1), mask_ckpt,
                               out_dir=tmp_path, data=small_data)
    resumed = train_removal_stage(smoke_cfg, mask_ckpt, resume_from=tmp_path / "removal_last.pt",
                                  data=small_data)
    assert half.epoch == 1 and resumed.epoch == 2
    assert abs(resumed.history[-1]["loss"] - full.history[-1]["loss"]) <= 1e-6
    x = torch.rand(1, 3, 64, 64)
    g, s = torch.rand(1, 1, 64, 64), torch.rand(1, 1, 64, 64)
    a = resumed.removal_model().eval()(x, g, s).final
    b = full.removal_model().eval()(x, g, s).final
    assert torch.equal(a, b)


def test_mask_resume_matches(smoke_cfg, small_data, mask_ckpt, tmp_path):
    train_mask_stage(dataclasses.replace(smoke_cfg, epochs_mask=1), out_dir=tmp_path, data=small_data)
    resumed = train_mask_stage(smoke_cfg, resume_from=tmp_path / "mask_last.pt", data=small_data)
    assert resumed.history == mask_ckpt.history


def test_resume_rejects_changed_config(smoke_cfg, small_data, tmp_path):
    train_mask_stage(dataclasses.replace(smoke_cfg, epochs_mask=1), out_dir=tmp_path, data=small_data)
    with pytest.raises(ValueError, match="config hash mismatch"):
        train_mask_stage(dataclasses.replace(smoke_cfg, lr=3e-4), resume_from=tmp_path / "mask_last.pt",
                         data=small_data)
    with pytest.raises(ValueError, match="cannot resume"):
        train_removal_stage(smoke_cfg, tmp_path / "mask_last.pt", resume_from=tmp_path / "mask_last.pt",
                            data=small_data)


def test_nan_loss_aborts_with_diagnostic(smoke_cfg, small_data):
    train = dict(small_data.train)
    train["I"] = train["I"].clone()
    train["I"][0] = math.nan
    bad = dataclasses.replace(small_data, train=train)
    with pytest.raises(FloatingPointError, match="non-finite mask loss at epoch 1"):
        train_mask_stage(dataclasses.replace(smoke_cfg, batch_size=64), data=bad)


def test_missing_dataset(tmp_path):
    with pytest.raises(FileNotFoundError):
        train_mask_stage(TrainConfig(data=str(tmp_path / "nothing"), epochs_mask=1))
    with pytest.raises(ValueError, match="no training dataset"):
        train_mask_stage(TrainConfig(epochs_mask=1))
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "nope.pt")


def test_real_dir_is_used(small_dataset, tmp_path):
    from PIL import Image
    import numpy as np

    real = tmp_path / "real"
    real.mkdir()
    for i in range(3):
        Image.fromarray(np.full((40, 50, 3), 40 * i, np.uint8)).save(real / f"{i}.png")
    data = TrainData.load(small_dataset, real)
    assert data.real.shape == (3, 3, 64, 64)


def test_checkpoint_format_checked(tmp_path):
    torch.save({"format": "something-else"}, tmp_path / "x.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.pt")
    assert isinstance(Checkpoint, type)
