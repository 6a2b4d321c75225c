import numpy as np
import pytest

from vebc.evolution import RSSolver
from vebc.fem import assemble_operators
from vebc.mesh import build_unit_square_mesh
from vebc.tensors import default_material


@pytest.fixture(scope="session")
def material():
    return default_material(2)


@pytest.fixture(scope="session")
def mesh1():
    return build_unit_square_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return build_unit_square_mesh(2)


@pytest.fixture(scope="session")
def mesh4():
    return build_unit_square_mesh(4)


@pytest.fixture(scope="session")
def ops1(mesh1, material):
    return assemble_operators(mesh1, material)


@pytest.fixture(scope="session")
def ops2(mesh2, material):
    return assemble_operators(mesh2, material)


@pytest.fixture(scope="session")
def ops4(mesh4, material):
    return assemble_operators(mesh4, material)


@pytest.fixture(scope="session")
def solver1(ops1):
    return RSSolver(ops1)


@pytest.fixture(scope="session")
def solver2(ops2):
    return RSSolver(ops2)


@pytest.fixture(scope="session")
def solver4(ops4):
    return RSSolver(ops4)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
