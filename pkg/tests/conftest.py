import numpy as np
import pytest

from naghdi import mesh as M
from naghdi.forms import MaterialParams, assemble
from naghdi.geometry import Surface


@pytest.fixture(scope="session")
def params():
    return MaterialParams()


@pytest.fixture(scope="session")
def plate8():
    return Surface(M.plate(8))


@pytest.fixture(scope="session")
def plate10():
    return Surface(M.plate(10))


@pytest.fixture(scope="session")
def plate20():
    return Surface(M.plate(20))


@pytest.fixture(scope="session")
def cylinder8():
    return Surface(M.cylinder_patch(8))


@pytest.fixture(scope="session")
def sphere():
    return Surface(M.icosphere(3))


@pytest.fixture(scope="session")
def plate8_system(plate8, params):
    return assemble(plate8, params)


def random_clamped_state(surface, rng):
    from naghdi.kinematics import ShellState
    nv = surface.mesh.n_vertices
    x = rng.standard_normal((nv, 6))
    x[surface.mesh.boundary_vertices] = 0.0
    return ShellState.from_vector(x.ravel())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
