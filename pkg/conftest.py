import pytest

from vpl_kinetic.grid import SpatialMesh, VelocityGrid
from vpl_kinetic.landau import KernelTable
from vpl_kinetic.operators import CollisionOperators


@pytest.fixture(scope="session")
def grid8():
    return VelocityGrid(6.0, 8)


@pytest.fixture(scope="session")
def table8(grid8):
    return KernelTable(grid8)


@pytest.fixture(scope="session")
def operators8(table8):
    return CollisionOperators(table8)


@pytest.fixture
def slab8():
    return SpatialMesh.slab(1.0, 8)
