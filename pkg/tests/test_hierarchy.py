import numpy as np
import pytest

from delone_rectifier.analyzers.counting import check_fits
from delone_rectifier.analyzers.hierarchy import (auto_delta, ball_meet_check, curve_diam_check, decompose,
                                                  descendant_ranges, discrepancy_points_bound,
                                                  discrepancy_via_hierarchy, fitted_regions, hierarchy_batch,
                                                  level_ratio_check, verify_bounds, verify_region)
from delone_rectifier.analyzers.regions import GridRegion
from delone_rectifier.analyzers.spectral import build_matrix, spectral_report
from delone_rectifier.core.patch import delone_set, geometry_stats
from delone_rectifier.core.utils import PreconditionError

BIG_BOX = GridRegion.box(3.0, (1, 1), (7, 7))
UNIT_BOX = GridRegion.box(1.0, (1, 1), (11, 11))


@pytest.fixture(scope='module')
def block3_stats(block3):
    return geometry_stats(block3, 0)


@pytest.fixture(scope='module')
def block3_spectral(block3):
    matrix = build_matrix(block3)
    return matrix, spectral_report(matrix)


def test_descendant_ranges(block3_patch):
    ranges = descendant_ranges(block3_patch)
    assert ranges[3].tolist() == [[0, 729]]
    widths = ranges[1][:, 1] - ranges[1][:, 0]
    assert np.all(widths == 9)
    assert ranges[0].shape == (729, 2)


def test_auto_delta(chair_stats, block3_stats):
    assert auto_delta(chair_stats) == 6.0
    assert auto_delta(block3_stats) == 3.0


def test_decompose_aligned_box(block3_patch, block3_stats):
    dec = decompose(block3_patch, BIG_BOX, block3_stats)
    assert dec.m == 3
    assert dec.part_sizes == [0, 27, 1]
    assert dec.fits and not dec.forced
    assert all(dec.invariants.values())
    assert dec.pieces == []


def test_decompose_region_with_hole(block3_patch, block3_stats, block3_spectral):
    ring = BIG_BOX.difference(GridRegion(3.0, [(3, 3)]))
    dec = decompose(block3_patch, ring, block3_stats, force=True)
    assert dec.m == 2
    assert dec.part_sizes == [0, 35]
    assert [(p.role, p.m, p.part_sizes) for p in dec.pieces] == [('filled', 3, [0, 27, 1]), ('hole', 2, [0, 1])]
    assert dec.invariants['pieces_valid']
    assert dec.to_dict()['pieces'][1]['cells'] == 1

    matrix, _ = block3_spectral
    report = verify_bounds(dec, matrix, block3_stats, matrix.lam_float)
    assert report.passed
    assert any(c['scope'] == 'piece[1] hole l=1' for c in report.checks)


def test_decompose_unaligned_box(block3_patch, block3_stats):
    dec = decompose(block3_patch, UNIT_BOX, block3_stats)
    assert dec.m == 2
    assert dec.part_sizes == [64, 4]
    assert dec.inside_counts[:3] == [100, 4, 0]
    assert dec.boundary_counts[0] == 44
    assert all(dec.invariants.values())


def test_decompose_preconditions(block3_patch, block3_stats):
    small = GridRegion.box(3.0, (2, 2), (3, 3))
    with pytest.raises(PreconditionError):
        decompose(block3_patch, small, block3_stats)
    with pytest.raises(PreconditionError):
        decompose(block3_patch, BIG_BOX)

    forced = decompose(block3_patch, small, block3_stats, force=True)
    assert forced.forced and forced.fits is False
    assert forced.part_sizes == [0, 1]

    with pytest.raises(PreconditionError):
        decompose(block3_patch, GridRegion(0.5, [(5, 5)]), force=True)


def test_verify_bounds(block3_patch, block3_stats, block3_spectral):
    matrix, _ = block3_spectral
    dec = decompose(block3_patch, UNIT_BOX, block3_stats)
    report = verify_bounds(dec, matrix, block3_stats, matrix.lam_float)
    assert report.passed
    assert report.values['l_0'] == 0
    assert report.values['one_norm'] == 9
    assert {c['name'] for c in report.checks} >= {'boundary_growth', 'lambda_m'}


def test_discrepancy_via_hierarchy(block3_patch, block3_stats, block3_spectral):
    matrix, report = block3_spectral
    points = delone_set(block3_patch)
    result = discrepancy_via_hierarchy(block3_patch, matrix, report, BIG_BOX, block3_stats, points=points)
    assert result['ok'] and result['chain_ok']
    assert result['partition_ok'] and result['volume_ok']
    assert result['N_tiles'] == 324
    assert result['lhs'] == pytest.approx(0.0, abs=1e-9)
    assert result['points']['ok']


def test_discrepancy_points_bound(block3_patch, block3_stats, block3_spectral):
    matrix, report = block3_spectral
    result = discrepancy_points_bound(block3_patch, matrix, report, delone_set(block3_patch), BIG_BOX,
                                      block3_stats)
    assert result['N_points'] == 324
    assert result['lhs'] == pytest.approx(0.0, abs=1e-9)
    assert result['ok'] and result['K_X'] > 0


def test_chair_negative_control(chair, chair_patch, chair_stats):
    matrix = build_matrix(chair)
    report = spectral_report(matrix)
    region = GridRegion.box(2.0, (1, 1), (15, 7))
    honest = discrepancy_via_hierarchy(chair_patch, matrix, report, region, chair_stats, force=True)
    assert honest['ok']
    assert honest['K_hat'] == pytest.approx(0.0, abs=1e-6)
    wrong = discrepancy_via_hierarchy(chair_patch, matrix, report, region, chair_stats, alpha=0.0, force=True)
    assert not wrong['ok']


def test_verify_region_row(block3_patch, block3_stats, block3_spectral):
    matrix, report = block3_spectral
    bounds, row = verify_region(block3_patch, matrix, report, delone_set(block3_patch), BIG_BOX, block3_stats)
    assert bounds.passed
    assert row['cells'] == 36
    assert row['m'] == 3
    assert row['violations'] == 0
    assert row['margin'] >= 0


def test_hierarchy_batch(block3_patch, block3_stats, block3_spectral):
    matrix, report = block3_spectral
    merged, rows = hierarchy_batch(block3_patch, matrix, report, delone_set(block3_patch),
                                   [BIG_BOX, UNIT_BOX], block3_stats, ball_trials=20, jobs=2)
    assert merged.passed
    assert [row['region'] for row in rows] == [0, 1]
    assert any(c['name'] == 'ball_meet' for c in merged.checks)
    assert all(c['scope'].startswith('region[') for c in merged.checks if c['name'] == 'discrepancy')


def test_ball_meet_check(block3_patch, block3_stats):
    at_vertex = ball_meet_check(block3_patch, 0, block3_stats, centers=np.array([[13.0, 13.0]]))
    assert at_vertex['max_tiles'] == 16
    assert at_vertex['ok']
    sampled = ball_meet_check(block3_patch, 0, block3_stats, trials=50, seed=3)
    assert sampled['trials'] == 50 and sampled['ok']


def test_curve_diam_check(block3_patch, block3_stats):
    result = curve_diam_check(block3_patch, 0, np.array([[3.0, 3.0], [9.0, 3.0]]), block3_stats)
    assert result['diam'] == pytest.approx(6.0)
    assert result['ok']


def test_level_ratio_check(block3_patch, block3_stats):
    boundary = BIG_BOX.geometry().boundary
    result = level_ratio_check(block3_patch, boundary, 0, 1, block3_stats)
    assert result['applicable']
    assert result['L_l_prime'] == 48
    assert result['ok'] is True


def test_fitted_regions(block3_patch, block3_stats):
    regions, summary = fitted_regions(block3_patch, block3_stats, count=3, n_cells=12, seed=5)
    assert summary['delta'] == 3.0
    assert 1 <= len(regions) <= 3
    assert check_fits(block3_patch, block3_stats, regions).passed


def test_fitted_regions_gives_up(block3_patch, block3_stats):
    with pytest.raises(PreconditionError):
        fitted_regions(block3_patch, block3_stats, count=1, n_cells=1, max_attempts=5)
