import numpy as np
import pytest

from softrod.backend import warmup


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # absorb JIT compilation before anything is timed or counted
    warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(0)
