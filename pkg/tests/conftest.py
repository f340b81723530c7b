import numpy as np
import pytest

from obdeg import build_disk, build_star, RadiusFunction


@pytest.fixture(scope="session")
def disk16():
    return build_disk(16, 32, 1.0)


@pytest.fixture(scope="session")
def disk24():
    return build_disk(24, 48, 1.0)


@pytest.fixture(scope="session")
def disk32():
    return build_disk(32, 64, 1.0)


@pytest.fixture(scope="session")
def star16():
    return build_star(RadiusFunction(1.0, a_cos=(0.15,), b_sin=(0.1,)), 16, 32)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
