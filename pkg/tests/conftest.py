from __future__ import annotations

import numpy as np
import pytest

from dualdrift.params import DEFAULT_MODEL
from dualdrift.sim import default_fit

KMH = 1 / 3.6


@pytest.fixture(scope="session")
def model():
    return DEFAULT_MODEL


@pytest.fixture(scope="session")
def fit():
    return default_fit()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
