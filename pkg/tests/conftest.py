import numpy as np
import pytest

from quasineutral.spectral import SpectralGrid


@pytest.fixture
def grid2():
    return SpectralGrid(2, 16)


@pytest.fixture
def grid3():
    return SpectralGrid(3, 8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
