"""Shared fixtures for the vision_permutator tests."""
import numpy as np
import pytest
from click.testing import CliRunner

from vision_permutator.autograd.tensor import set_num_workers
from vision_permutator.model_zoo import build, get_config
from vision_permutator.models.config import SyntheticSpec, TrainConfig


@pytest.fixture
def rng():
    """A fresh seeded generator per test."""
    return np.random.default_rng(0)


@pytest.fixture
def runner():
    """Create a CLI runner."""
    return CliRunner()


@pytest.fixture
def single_worker():
    """Run matmul on one thread and restore that default afterwards."""
    set_num_workers(1)
    yield
    set_num_workers(1)


@pytest.fixture
def tiny_config():
    return get_config("ViP-Tiny")


@pytest.fixture
def tiny_model(tiny_config):
    return build(tiny_config, np.random.default_rng(0))


@pytest.fixture
def small_synthetic():
    """A few samples per class of the position task, enough for plumbing tests."""
    return SyntheticSpec(train_per_class=4, val_per_class=2)


@pytest.fixture
def quick_train_config(tmp_path, small_synthetic):
    """Two short epochs of ViP-Tiny writing into a temporary directory."""
    return TrainConfig(
        architecture="ViP-Tiny",
        seed=3,
        batch_size=16,
        base_lr=1.6e-2,
        epochs=2,
        synthetic=small_synthetic,
        output_dir=str(tmp_path / "run"),
    )
