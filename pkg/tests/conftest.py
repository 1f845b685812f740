"""Shared discretizations for the test suite (built once per session)."""

import numpy as np
import pytest

from confspec import build_sphere3_class, build_torus_class

TWO_PI = 2.0 * np.pi


@pytest.fixture(scope="session")
def torus16():
    return build_torus_class((16, 16, 16), (TWO_PI,) * 3, 6.0)


@pytest.fixture(scope="session")
def torus16_neg():
    return build_torus_class((16, 16, 16), (TWO_PI,) * 3, -6.0)


@pytest.fixture(scope="session")
def torus16_sin():
    return build_torus_class((16, 16, 16), (TWO_PI,) * 3, "6 + 2*sin(x1)")


@pytest.fixture(scope="session")
def torus8():
    return build_torus_class((8, 8, 8), (TWO_PI,) * 3, 6.0)


@pytest.fixture(scope="session")
def torus8_zero():
    return build_torus_class((8, 8, 8), (TWO_PI,) * 3, 0.0)


@pytest.fixture(scope="session")
def torus8_sin():
    return build_torus_class((8, 8, 8), (TWO_PI,) * 3, "6 + 2*sin(x1)")


@pytest.fixture(scope="session")
def sphere4():
    return build_sphere3_class(4)
