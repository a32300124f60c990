"""
Shared fixtures: small meshes and element factories
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from element import ElementBuilder  # noqa: E402
from mesh_io import from_polygons, generate_mesh  # noqa: E402
from models import ElementConfig  # noqa: E402


def regular_polygon(sides: int, radius: float = 1.0, phase: float = 0.1):
    angles = phase + 2.0 * np.pi * np.arange(sides) / sides
    vertices = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return from_polygons(vertices, [list(range(sides))])


@pytest.fixture
def unit_square():
    return generate_mesh("square_grid", 1)


@pytest.fixture
def triangle():
    return from_polygons([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [[0, 1, 2]])


@pytest.fixture
def pentagon():
    return regular_polygon(5)


@pytest.fixture
def l_shape():
    # Nonconvex but star-shaped with respect to [0, 1]^2
    return from_polygons(
        [[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]],
        [[0, 1, 2, 3, 4, 5]],
    )


@pytest.fixture
def unit_cube():
    return generate_mesh("cube_grid", 1)


@pytest.fixture
def make_element():
    """element(mesh, m, k, K=0) built through an ElementBuilder"""
    builders = {}

    def build(mesh, m, k, K=0):
        key = (id(mesh), m, k)
        if key not in builders:
            builders[key] = ElementBuilder(mesh, ElementConfig(mesh.dim, m, k))
        return builders[key].element(K)

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
