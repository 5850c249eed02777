import numpy as np
import pytest

from phytoscan.synthscan import PRESETS, generate_plant


@pytest.fixture(scope="session")
def default_plant():
    return generate_plant(PRESETS["default"])


@pytest.fixture(scope="session")
def tiny_plant():
    return generate_plant(PRESETS["tiny"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
