import numpy as np
import pytest

from delone_rectifier.analyzers.regions import (GridRegion, hat_completion, random_connected_region,
                                                random_regions, region_grid_limits)
from delone_rectifier.core.utils import RegionError


def annulus(delta=1.0):
    return GridRegion.box(delta, (0, 0), (5, 5)).difference(GridRegion(delta, [(2, 2)]))


def test_box_measure_and_boundary(square_region):
    assert len(square_region) == 16
    assert square_region.measure() == 16.0
    assert len(square_region.boundary_facets()) == 16
    assert square_region.boundary_measure() == 16.0
    lower, upper = square_region.bounds()
    assert lower.tolist() == [2.0, 2.0] and upper.tolist() == [6.0, 6.0]


def test_cell_size_scales_measures():
    region = GridRegion.box(0.5, (0, 0), (2, 3))
    assert region.measure() == pytest.approx(1.5)
    assert region.boundary_measure() == pytest.approx(5.0)


def test_cube_constructor_requires_alignment():
    assert len(GridRegion.cube(2.0, (4.0, 6.0), 8.0)) == 16
    with pytest.raises(RegionError):
        GridRegion.cube(2.0, (1.0, 0.0), 4.0)


def test_nonpositive_delta():
    with pytest.raises(RegionError):
        GridRegion(0.0, [(0, 0)])


def test_empty_region():
    empty = GridRegion(2.0, [])
    assert empty.is_empty() and empty.cells.shape == (0, 2)
    assert empty.measure() == 0.0
    assert len(empty.boundary_facets()) == 0
    assert empty.connected_components() == []
    assert GridRegion(1.0, [], dimension=3).cells.shape == (0, 3)
    square = GridRegion.box(1.0, (0, 0), (2, 2))
    assert square.difference(square).is_empty()
    assert len(empty.union(GridRegion.box(2.0, (0, 0), (2, 2)))) == 4


def test_duplicate_cells_collapse():
    region = GridRegion(1.0, [(0, 0), (0, 0), (1, 0)])
    assert len(region) == 2
    assert (1, 0) in region


def test_connectivity_and_holes():
    ring = annulus()
    assert ring.is_connected()
    holes = ring.holes()
    assert len(holes) == 1 and holes[0].cell_set == {(2, 2)}
    assert len(ring.boundary_components()) == 2
    assert not ring.has_connected_boundary()

    split = GridRegion(1.0, [(0, 0), (2, 0)])
    assert len(split.connected_components()) == 2


def test_diagonal_cells_are_not_connected():
    assert not GridRegion(1.0, [(0, 0), (1, 1)]).is_connected()


def test_hat_completion_fills_holes():
    hats = hat_completion(annulus())
    assert len(hats) == 1
    hat = hats[0]
    assert len(hat.filled) == 25
    assert hat.filled.has_connected_boundary()
    assert hat.filled.measure() == hat.component.measure() + sum(h.measure() for h in hat.holes)


def test_set_operations_need_same_grid():
    with pytest.raises(RegionError):
        GridRegion(1.0, [(0, 0)]).union(GridRegion(2.0, [(0, 0)]))
    small = GridRegion(1.0, [(1, 1)])
    assert small.is_subset(GridRegion.box(1.0, (0, 0), (3, 3)))


def test_geometry_area_matches_measure():
    ring = annulus(2.0)
    assert ring.geometry().area == pytest.approx(ring.measure())
    assert ring.facet_geometry().length == pytest.approx(ring.boundary_measure())


def test_three_dimensional_boundary():
    cube = GridRegion.box(1.0, (0, 0, 0), (2, 2, 2))
    assert cube.measure() == 8.0
    assert cube.boundary_measure() == 24.0
    with pytest.raises(RegionError):
        cube.geometry()


def test_random_connected_region(rng):
    region = random_connected_region(1.0, 40, (0, 0), (20, 20), rng)
    assert len(region) == 40
    assert region.is_connected()
    assert region.within((0, 0), (20, 20))


def test_random_region_capped_by_box(rng):
    region = random_connected_region(1.0, 100, (0, 0), (3, 3), rng)
    assert len(region) == 9


def test_random_regions_are_seeded():
    first = random_regions((0, 0, 64, 32), 4.0, 5, 10, seed=7)
    second = random_regions((0, 0, 64, 32), 4.0, 5, 10, seed=7)
    assert [r.cell_set for r in first] == [r.cell_set for r in second]
    assert all(r.within((0, 0), (64, 32)) for r in first)


def test_region_grid_limits():
    assert region_grid_limits((0, 0, 64, 32), 4.0) == ([0, 0], [16, 8])
    assert region_grid_limits((1, 1, 10, 10), 4.0) == ([1, 1], [2, 2])
    with pytest.raises(RegionError):
        random_connected_region(4.0, 5, (2, 2), (2, 3), np.random.default_rng(0))
