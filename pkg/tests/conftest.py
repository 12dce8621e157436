"""Shared fixtures: built-in rules, small patches, lattices and regions."""

import numpy as np
import pytest

from delone_rectifier.analyzers.regions import GridRegion
from delone_rectifier.core.builtin_rules import block_rule, chair_rule, penrose_triangles_rule, table_rule
from delone_rectifier.core.patch import delone_set, generate, geometry_stats, lattice_points

BLOCK3 = 'a=aba.bab.aba;b=bab.aba.bab'


@pytest.fixture(scope='session')
def chair():
    return chair_rule()


@pytest.fixture(scope='session')
def table():
    return table_rule()


@pytest.fixture(scope='session')
def penrose():
    return penrose_triangles_rule()


@pytest.fixture(scope='session')
def block3():
    return block_rule(BLOCK3)


@pytest.fixture(scope='session')
def chair_patch(chair):
    return generate(chair, depth=4)


@pytest.fixture(scope='session')
def chair_points(chair_patch):
    return delone_set(chair_patch)


@pytest.fixture(scope='session')
def chair_stats(chair):
    return geometry_stats(chair, 0)


@pytest.fixture(scope='session')
def block3_patch(block3):
    return generate(block3, depth=3)


@pytest.fixture(scope='session')
def chair_points_deep(chair):
    """Chair Delone set at depth 7: a 256 x 128 counting window."""
    return delone_set(generate(chair, depth=7))


@pytest.fixture
def unit_lattice():
    """Z^2 on a 32 x 32 window, including a margin of one cell."""
    return lattice_points((0, 0, 32, 32), margin=1)


@pytest.fixture
def square_region():
    return GridRegion.box(1.0, (2, 2), (6, 6))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
