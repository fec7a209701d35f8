import numpy as np
import pytest

from gwharmonic import make_distribution


@pytest.fixture(scope="session")
def geometric():
    return make_distribution("geometric")


@pytest.fixture(scope="session")
def poisson():
    return make_distribution("poisson")


@pytest.fixture(scope="session")
def binary():
    return make_distribution("binary")


@pytest.fixture(scope="session")
def all_families(geometric, poisson, binary):
    return {"geometric": geometric, "poisson": poisson, "binary": binary}


def rng_for(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)
