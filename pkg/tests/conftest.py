import numpy as np
import pytest

import geomflow as gf


@pytest.fixture(scope="session")
def circle16():
    return gf.make_circle_mesh(16)


@pytest.fixture(scope="session")
def ico0():
    return gf.make_icosphere_mesh(0)


@pytest.fixture(scope="session")
def ico1():
    return gf.make_icosphere_mesh(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
