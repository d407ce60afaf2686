import numpy as np
import pytest

from src.core.spectral_core import build_basis


@pytest.fixture(scope="session")
def basis():
    return build_basis(256)


@pytest.fixture(scope="session")
def small_basis():
    return build_basis(64)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(key=20240917))
