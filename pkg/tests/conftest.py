import numpy as np
import pytest
import torch

from roicodec.model import build_model
from roicodec.toydata import make_synthetic_dataset, make_synthetic_pair


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0DEC)


@pytest.fixture(scope="session")
def nano_model():
    model = build_model("nano", seed=11)
    model.eval()
    return model


@pytest.fixture(scope="session")
def nano_explicit_model():
    model = build_model("nano", mode="explicit", seed=11)
    model.eval()
    return model


@pytest.fixture(scope="session")
def toy_pairs():
    return make_synthetic_dataset(6, size=64, seed=1234)


@pytest.fixture
def pair64(rng):
    return make_synthetic_pair(rng, 64)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
