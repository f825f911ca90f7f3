import numpy as np
import pytest

from mtlab.model import build_model


@pytest.fixture
def model():
    return build_model(dict(sites=8, fermions=1, nmax=2, coupling=[[0.1, 0.0], [0.05, 0.0]]))


@pytest.fixture
def model2():
    return build_model(dict(sites=6, fermions=2, nmax=2, coupling=[[0.1, 0.02], [0.05, -0.01]]))


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
