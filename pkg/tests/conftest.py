"""Shared fixtures."""
import json
from pathlib import Path

import numpy as np
import pytest

from pnp.cnn_train import make_patches, model_from_config, save_model, train
from pnp.config import NormMode, TrainConfig
from pnp.core import ImageTensor, make_rng
from pnp.fidelity import quadratic_model
from pnp.monitoring import metrics_collector


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def small_shape():
    return (1, 4, 4)


@pytest.fixture
def quadratic_zero(small_shape):
    """f(x) = 0.5 ||x||^2; every linear PnP iteration then has fixed point 0."""
    return quadratic_model(ImageTensor.zeros(*small_shape))


@pytest.fixture
def quadratic_random(rng, small_shape):
    return quadratic_model(ImageTensor(rng.random(small_shape)))


def random_pairs_list(rng, shape, count, scale=1.0):
    return [(ImageTensor(rng.standard_normal(shape) * scale), ImageTensor(rng.standard_normal(shape) * scale))
            for _ in range(count)]


@pytest.fixture
def pair_factory(rng):
    def make(shape, count=1000, scale=1.0):
        return random_pairs_list(rng, shape, count, scale)
    return make


def tiny_train_config(norm_mode: NormMode, seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=2, batch_size=16, num_patches=64, patch_size=8, depth=3,
                       hidden_channels=4, norm_mode=norm_mode, seed=seed)


@pytest.fixture(scope="session")
def tiny_models():
    """Quickly trained realSN and unconstrained twins on the same data."""
    models = {}
    for mode in (NormMode.REAL_SN, NormMode.NONE):
        cfg = tiny_train_config(mode)
        data = make_patches(cfg.num_patches, cfg.patch_size, cfg.seed)
        models[mode] = train(model_from_config(cfg), cfg, data).model
    return models


@pytest.fixture
def realsn_model(tiny_models):
    return tiny_models[NormMode.REAL_SN]


@pytest.fixture
def plain_model(tiny_models):
    return tiny_models[NormMode.NONE]


@pytest.fixture
def model_file(tmp_path, realsn_model) -> Path:
    path = tmp_path / "model.pnpm"
    save_model(path, realsn_model)
    return path


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment document and return its path."""
    def write(document: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(document, indent=2))
        return path
    return write


@pytest.fixture(autouse=True)
def clear_metrics():
    yield
    metrics_collector.clear()

