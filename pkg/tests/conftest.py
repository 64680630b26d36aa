"""Shared fixtures: tiny configs, float64 precision and throwaway datasets."""

import numpy as np
import pytest

from pdrlab import db
from pdrlab.ad.tensor import precision, set_default_dtype
from pdrlab.config import ArchConfig, DatasetConfig, ExperimentConfig, LooccConfig, TrainConfig, set_config
from pdrlab.nets import InverseRenderer
from pdrlab.scenegen import build_dataset

PDR_ENV = ("PDR_THREADS", "PDR_PRECISION", "PDR_OUTPUT_DIR", "PDR_LOG_LEVEL")


@pytest.fixture(autouse=True)
def clean_state(monkeypatch):
    """Each test starts with default precision, no global config and no open registry."""
    for key in PDR_ENV:
        monkeypatch.delenv(key, raising=False)
    set_default_dtype("float32")
    set_config(None)
    db.close_registries()
    yield
    set_default_dtype("float32")
    set_config(None)
    db.close_registries()


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def tiny_arch() -> ArchConfig:
    return ArchConfig(enc_channels=(4,), dec_channels=(4,), mlp_hidden=8)


@pytest.fixture
def tiny_config(tmp_path, tiny_arch) -> ExperimentConfig:
    """16x16 images, F=8, one conv block per encoder."""
    return ExperimentConfig(
        image_size=16,
        feature_dim=8,
        output_dir=tmp_path / "out",
        model=tiny_arch,
        loocc=LooccConfig(batch_size=8, patience=2),
        train=TrainConfig(max_epochs=2),
        dataset=DatasetConfig(n=40),
    )


@pytest.fixture
def tiny_model(tiny_config) -> InverseRenderer:
    return InverseRenderer(tiny_config.image_size, tiny_config.feature_dim, tiny_config.model, seed=0)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_config):
    return build_dataset(
        tiny_config.dataset.n,
        tmp_path / "dataset",
        seed=0,
        cfg=tiny_config.generator,
        size=tiny_config.image_size,
        render_cfg=tiny_config.render,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
