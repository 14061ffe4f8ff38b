import pytest

from deglass.data import TrainData
from deglass.synth import SynthConfig, synth_dataset
from deglass.trainer import TrainConfig, train_mask_stage, train_removal_stage

SMOKE = dict(epochs_mask=2, epochs_removal=2, base_channels=8, n_residual_blocks=2, feature_channels=16,
             n_da_blocks=2)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "small"
    synth_dataset(SynthConfig(n=64, image_size=64, seed=5, split=(0.75, 0.125, 0.125)), root)
    return root


@pytest.fixture(scope="session")
def small_data(small_dataset):
    return TrainData.load(small_dataset)


@pytest.fixture(scope="session")
def smoke_cfg(small_dataset):
    return TrainConfig(data=str(small_dataset), **SMOKE)


@pytest.fixture(scope="session")
def mask_ckpt(smoke_cfg, small_data, tmp_path_factory):
    return train_mask_stage(smoke_cfg, out_dir=tmp_path_factory.mktemp("mask_run"), data=small_data)


@pytest.fixture(scope="session")
def removal_run(smoke_cfg, small_data, mask_ckpt, tmp_path_factory):
    out = tmp_path_factory.mktemp("removal_run")
    return train_removal_stage(smoke_cfg, mask_ckpt, out_dir=out, data=small_data), out


# Verdict lines from the acceptance module, echoed at the end of the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
