import numpy as np
import pytest

from picm.tensor import synth_grid


@pytest.fixture
def small_grid():
    return synth_grid(3, 4, 4, 8, "loguniform:0.2:20")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
