import numpy as np
import pytest

from roep.catalog import default_catalog
from roep.scenegen import SceneGenerator


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def generator(catalog):
    return SceneGenerator(catalog)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
