import numpy as np
import pytest

from meshspectra import OperatorParams, modified_operator
from meshspectra.synthetic import bumpy_sphere, icosphere, plane_grid, tetrahedron


def bent_grid(nx, ny, size=2.0):
    """Non-flat, non-uniform open mesh; the workhorse for derivative audits."""
    base = plane_grid(nx, ny, size=size)
    v = base.vertices.copy()
    v[:, 2] = 0.2 * np.sin(3.0 * v[:, 0]) * np.cos(2.0 * v[:, 1])
    from meshspectra import Mesh

    return Mesh(v, base.faces)


@pytest.fixture(scope="session")
def tet():
    return tetrahedron()


@pytest.fixture(scope="session")
def bumpy():
    # 162 vertices, simple (non-degenerate) low spectrum: the standard mesh
    # for eigen-derivative tests.
    return bumpy_sphere(2)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3)


@pytest.fixture(scope="session")
def grid200():
    return bent_grid(20, 10)


@pytest.fixture(scope="session")
def bumpy_asm(bumpy):
    return modified_operator(bumpy, OperatorParams.identity(bumpy))
