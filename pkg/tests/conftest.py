import numpy as np
import pytest
from hypothesis import settings

from vsiarray.transport import helium_beam, silicon_carbide, simulate_profile

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sic():
    return silicon_carbide()


@pytest.fixture(scope="session")
def beam30():
    return helium_beam(30.0)


@pytest.fixture(scope="session")
def small_profile(beam30, sic):
    """2000 histories: enough for depth sampling and straggle in array tests."""
    return simulate_profile(beam30, sic, 2000, 11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
