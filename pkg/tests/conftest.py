import numpy as np
import pytest
import torch

from acsseg.data import build_manifest, write_synthetic_dataset
from acsseg.model import ModelConfig


@pytest.fixture
def tiny():
    return ModelConfig.from_scale("tiny")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


@pytest.fixture
def binary_root(tmp_path):
    return write_synthetic_dataset(tmp_path / "ds", 9, "binary", (64, 64), seed=3)


@pytest.fixture
def binary_manifest(binary_root):
    return build_manifest(binary_root, "binary", seed=7, target_size=(64, 64))
