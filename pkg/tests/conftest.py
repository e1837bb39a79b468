import numpy as np
import pytest

from polydg_stokes.experiments import cached_mesh
from polydg_stokes.mesh import UNIT_SQUARE, classify_boundary
from polydg_stokes import scenarios


@pytest.fixture(scope="session")
def mesh100():
    return cached_mesh(UNIT_SQUARE, 100, 50, 1)


@pytest.fixture(scope="session")
def sine():
    return scenarios.manufactured_sine()


@pytest.fixture(scope="session")
def poly():
    return scenarios.recovery_poly()


@pytest.fixture(scope="session")
def sine_mesh100(mesh100, sine):
    return classify_boundary(mesh100, sine.classifier)


@pytest.fixture(scope="session")
def poly_mesh100(mesh100, poly):
    return classify_boundary(mesh100, poly.classifier)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
