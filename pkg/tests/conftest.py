from __future__ import annotations

import json

import pytest

from model_core.datasets import make_synthetic
from model_core.schemas import ModelSpec
from runs.config import config_from_dict


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run Monte-Carlo and end-to-end checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _run_output_dir(settings, tmp_path):
    settings.RUN_OUTPUT_DIR = str(tmp_path / "runs")


@pytest.fixture
def quadratic_spec():
    return ModelSpec(kind="quadratic", input_dim=10)


@pytest.fixture
def noise_stream():
    return make_synthetic("noisy_quadratic", 4096, 7, dim=10, sigma2=1.0)


@pytest.fixture
def mlp_spec():
    return ModelSpec(kind="mlp", input_dim=2, hidden_width=8, num_classes=2)


@pytest.fixture
def blobs():
    return make_synthetic("blobs", 256, 0)


@pytest.fixture
def config_payload():
    """A small MLP-on-blobs run that finishes in well under a second."""

    def factory(**overrides):
        payload = {
            "name": "tiny",
            "model": {"kind": "mlp", "input_dim": 2, "hidden_width": 8, "num_classes": 2},
            "dataset": {"kind": "blobs", "size": 128, "dim": 2, "seed": 3},
            "optimizer": {"base_lr": 0.1, "momentum": 0.9, "base_batch": 16, "strategy": "momentum_sgd"},
            "lr_schedule": {"kind": "cosine", "warmup_epochs": 1},
            "schedule": {"kind": "static", "n_base": 4},
            "batch_policy": {"kind": "fixed_per_worker", "value": 4},
            "epochs": 3,
            "seed": 11,
        }
        payload.update(overrides)
        return payload

    return factory


@pytest.fixture
def run_config(config_payload):
    def factory(**overrides):
        return config_from_dict(config_payload(**overrides))

    return factory


@pytest.fixture
def config_file(tmp_path, config_payload):
    def factory(name="config.json", **overrides):
        path = tmp_path / name
        path.write_text(json.dumps(config_payload(**overrides)), encoding="utf-8")
        return path

    return factory
