import math

import numpy as np
import pytest

from delone_rectifier.core.patch import (HierarchicalPatch, delone_report, delone_set, generate,
                                         geometry_stats, inscribed_window, lattice_points,
                                         tile_counts_by_level)
from delone_rectifier.core.utils import DepthLimitError, PreconditionError, RuleValidationError
from delone_rectifier.core.rules import parse_rule_text
from tests.test_rules import SQUARE_RULE


def test_chair_tile_counts(chair):
    patch = generate(chair, depth=5)
    assert patch.tile_count(0) == 1024
    assert [patch.tile_count(level) for level in range(6)] == [1024, 256, 64, 16, 4, 1]


def test_children_link_back_to_parents(chair_patch):
    for level in range(1, chair_patch.depth + 1):
        for index in range(chair_patch.tile_count(level)):
            for child in chair_patch.children_of(level, index):
                assert chair_patch.tiles(level - 1)[child].parent == index


def test_level_areas_are_exact(chair_patch):
    top = chair_patch.level_area_form(chair_patch.depth)
    for level in range(chair_patch.depth):
        assert chair_patch.level_area_form(level) == top


def test_polygons_cover_seed_supertile(chair_patch):
    total = sum(abs(0.5 * np.sum(p[:, 0] * np.roll(p[:, 1], -1) - p[:, 1] * np.roll(p[:, 0], -1)))
                for p in chair_patch.polygons(0))
    assert total == pytest.approx(3.0 * 4 ** chair_patch.depth)


def test_chair_window_is_largest_rectangle(chair_patch):
    x0, y0, x1, y1 = chair_patch.window()
    side = 2 ** chair_patch.depth
    assert (x1 - x0) * (y1 - y0) == 2 * side * side
    assert x0 >= 0 and y0 >= 0 and x1 <= 2 * side and y1 <= 2 * side


def test_inscribed_window_of_empty_region():
    import shapely
    assert inscribed_window(shapely.box(0.2, 0.2, 0.8, 0.8)) == (0, 0, 0, 0)


def test_depth_cap(chair):
    with pytest.raises(DepthLimitError):
        generate(chair, depth=6, max_tiles=1000)


def test_negative_depth(chair):
    with pytest.raises(PreconditionError):
        generate(chair, depth=-1)


def test_invalid_rule_is_rejected():
    rule = parse_rule_text(SQUARE_RULE.replace('t=(1,1)', 't=(0,0)'))
    with pytest.raises(RuleValidationError) as info:
        generate(rule, depth=1)
    assert not info.value.report.valid


def test_tile_counts_follow_matrix(penrose):
    vectors = tile_counts_by_level(penrose, 'obtuse', 4)
    assert list(vectors[4]) == [1, 0]
    assert list(vectors[3]) == [2, 1]
    assert list(vectors[2]) == [5, 3]


def test_geometry_stats(chair):
    stats = geometry_stats(chair, 0)
    assert stats.r == pytest.approx(0.5, abs=1e-9)
    assert stats.R == pytest.approx(math.sqrt(2))
    assert stats.K == 128
    level2 = geometry_stats(chair, 2)
    assert level2.r == pytest.approx(2.0, abs=1e-8)
    assert level2.K == 128


def test_delone_set_of_chair(chair_patch, chair_points):
    assert len(chair_points.points) == chair_patch.tile_count(0)
    assert chair_points.window == chair_patch.window()
    report = delone_report(chair_points)
    assert report['packing_radius'] > 0.2
    assert report['covering_ok']


def test_patch_json_ingestion(chair_patch, chair_points):
    ingested = HierarchicalPatch.from_dict(chair_patch.to_dict())
    assert ingested.rule is None
    assert ingested.tile_count(0) == chair_patch.tile_count(0)
    assert ingested.window() == chair_patch.window()
    points = delone_set(ingested)
    assert np.allclose(np.sort(points.points, axis=0), np.sort(chair_points.points, axis=0), atol=1e-8)


def test_geometry_stats_of_patches(chair, chair_patch):
    assert geometry_stats(chair_patch, 1) == geometry_stats(chair, 1)
    ingested = HierarchicalPatch.from_dict(chair_patch.to_dict())
    for level in (0, 2):
        measured = geometry_stats(ingested, level)
        expected = geometry_stats(chair, level)
        assert measured.r == pytest.approx(expected.r, abs=1e-6)
        assert measured.R == pytest.approx(expected.R)
        assert abs(measured.K - expected.K) <= 1
    with pytest.raises(PreconditionError):
        geometry_stats(ingested, chair_patch.depth + 1)


def test_lattice_points_cover_window():
    lattice = lattice_points((0, 0, 4, 4))
    assert len(lattice.points) == 25
    assert len(lattice.points_in_window()) == 16
    assert lattice.window_size == (4, 4)


def test_delone_report_needs_two_points():
    from delone_rectifier.core.patch import DeloneSetWindow
    with pytest.raises(PreconditionError):
        delone_report(DeloneSetWindow(np.zeros((1, 2)), (0, 0, 1, 1)))
