import numpy as np
import pytest

from smegemm.memsim import SystemProfile


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def profile():
    return SystemProfile()
