import math

import numpy as np
import pytest
import shapely

from delone_rectifier.analyzers.counting import (barycenter_sandwich, boundary_count_bound, check_fits,
                                                 count_points, count_points_in_box, count_tiles,
                                                 density_deviation, e_profile, fit_deviation,
                                                 fitting_delta, hat_identity, laczkovich_ratio,
                                                 repetitivity_estimate, unit_cell_counts)
from delone_rectifier.analyzers.regions import (GridRegion, hat_completion, random_connected_region,
                                                random_regions, region_grid_limits)
from delone_rectifier.core.patch import DeloneSetWindow, delone_set, generate, geometry_stats, lattice_points
from delone_rectifier.core.utils import RegionError, RegressionError, ZeroCountError


def test_count_points_on_lattice(unit_lattice, square_region):
    assert count_points(unit_lattice, square_region) == 16
    assert count_points_in_box(unit_lattice, (0, 0), 4) == 16


def test_count_points_matches_brute_force(rng):
    for _ in range(100):
        points = DeloneSetWindow(rng.uniform(0, 20, (60, 2)), (0, 0, 20, 20))
        delta = float(rng.choice([0.5, 1.0, 2.0]))
        limit = int(20 / delta)
        region = random_connected_region(delta, int(rng.integers(1, 30)), (0, 0), (limit, limit), rng)
        expected = sum(1 for x, y in points.points
                       if (int(math.floor(x / delta)), int(math.floor(y / delta))) in region.cell_set)
        assert count_points(points, region) == expected


def test_region_outside_window_rejected(unit_lattice):
    with pytest.raises(RegionError):
        count_points(unit_lattice, GridRegion.box(1.0, (30, 30), (34, 34)))


def test_density_deviation(unit_lattice):
    assert density_deviation(unit_lattice, (0, 0), 4, 1.0) == 1.0
    assert density_deviation(unit_lattice, (0, 0), 4, 0.5) == 2.0
    with pytest.raises(ZeroCountError):
        density_deviation(unit_lattice, (0.5, 0.5), 0.4, 1.0)


def test_unit_cell_counts(unit_lattice):
    counts = unit_cell_counts(unit_lattice)
    assert counts.shape == (32, 32)
    assert np.all(counts == 1)


def test_e_profile_of_lattice(unit_lattice):
    profile = e_profile(unit_lattice, 1.0, [1, 2, 4, 8, 16, 32], min_translates=100)
    assert [e.E for e in profile.entries] == [1.0] * 6
    assert [e.censored for e in profile.entries] == [False] * 5 + [True]
    assert profile.entries[-1].translates == 1
    assert [m for m, _ in profile.partial_products] == [1, 2, 3, 4]
    assert profile.partial_products[-1][1] == 1.0
    assert profile.products_stop == 32


def test_e_profile_products_skip_missing_sizes():
    lattice = lattice_points((0, 0, 8, 8))
    profile = e_profile(lattice, 1.0, [2, 4, 16], min_translates=1)
    assert profile.entries[-1].translates == 0 and math.isnan(profile.entries[-1].E)
    assert profile.partial_products == [(1, 1.0), (2, 1.0)]
    assert profile.products_stop == 16
    assert profile.to_dict()['products_stop'] == 16


def test_e_profile_flags_empty_cubes():
    points = DeloneSetWindow(np.array([[0.5, 0.5], [3.5, 3.5]]), (0, 0, 4, 4))
    entry = e_profile(points, 1.0, [1]).entries[0]
    assert entry.empty_cube
    assert entry.E == math.inf


@pytest.mark.slow
def test_e_profile_of_chair_converges(chair_points_deep):
    profile = e_profile(chair_points_deep, 1 / 3, [4, 8, 16, 32])
    values = profile.values()
    assert not any(entry.censored for entry in profile.entries)
    assert all(1.0 < a for a in values)
    assert all(a > b for a, b in zip(values, values[1:]))

    assert profile.products_stop is None
    assert [m for m, _ in profile.partial_products] == [2, 3, 4, 5]
    logs = [math.log(p) for _, p in profile.partial_products]
    assert logs[3] - logs[2] <= 0.5 * (logs[2] - logs[1])


def test_fit_deviation_exact_lattice():
    fit = fit_deviation(lattice_points((0, 0, 128, 128)))
    assert fit.rho_hat == 1.0
    assert fit.delta_hat == 'exact'
    assert fit.sizes == [8, 16, 32, 64]


def test_fit_deviation_needs_large_window(unit_lattice):
    with pytest.raises(RegressionError):
        fit_deviation(unit_lattice)


@pytest.mark.slow
def test_fit_deviation_on_chair(chair):
    points = delone_set(generate(chair, depth=6))
    fit = fit_deviation(points)
    assert abs(fit.rho_hat - 1 / 3) < 0.02
    assert fit.sizes == [8, 16, 32]


def test_laczkovich_ratio_vanishes_on_lattice(unit_lattice, rng):
    regions = [random_connected_region(2.0, 20, (0, 0), (16, 16), rng) for _ in range(10)]
    result = laczkovich_ratio(unit_lattice, 1.0, regions)
    assert result.K_hat == 0.0
    assert len(result.ratios) == 10


def test_laczkovich_ratio_is_job_independent(chair_points):
    regions = [random_connected_region(2.0, 12, (0, 0), (16, 8), np.random.default_rng(s)) for s in range(8)]
    serial = laczkovich_ratio(chair_points, 1 / 3, regions, jobs=1)
    threaded = laczkovich_ratio(chair_points, 1 / 3, regions, jobs=4)
    assert serial.ratios == threaded.ratios
    assert serial.K_hat == max(serial.ratios)


def supertile_region(patch, delta):
    """Cells covered by the level (depth - 2) supertiles lying inside the counting window."""
    x0, y0, x1, y1 = patch.window()
    frame = shapely.box(x0, y0, x1, y1).buffer(1e-6)
    tiles = [shapely.Polygon(p) for p in patch.polygons(patch.depth - 2)]
    union = shapely.union_all([t for t in tiles if frame.covers(t)])
    lower, upper = region_grid_limits(patch.window(), delta)
    cells = GridRegion.box(delta, lower, upper).cells
    centers = (cells + 0.5) * delta
    return GridRegion(delta, cells[shapely.contains_xy(union, centers[:, 0], centers[:, 1])])


@pytest.mark.slow
def test_laczkovich_ratio_is_stable_across_depths(chair):
    k_hat, control = [], []
    for depth in (5, 6, 7):
        patch = generate(chair, depth=depth)
        points = delone_set(patch)
        regions = random_regions(points.window, 4.0, 200, 64, seed=0)
        k_hat.append(laczkovich_ratio(points, 1 / 3, regions).K_hat)

        aligned = supertile_region(patch, 4.0)
        assert laczkovich_ratio(points, 1 / 3, [aligned]).K_hat < 1e-9
        control.append(laczkovich_ratio(points, 1.1 / 3, [aligned]).K_hat)

    assert all(0 < k < math.inf for k in k_hat)
    assert k_hat[2] <= 1.25 * k_hat[1] <= 1.25 ** 2 * k_hat[0]
    # Inflated density: the ratio doubles with the linear size of the region.
    assert control[1] >= 2 * control[0] * (1 - 1e-9)
    assert control[2] >= 2 * control[1] * (1 - 1e-9)


def test_repetitivity_of_lattice(unit_lattice):
    estimate = repetitivity_estimate(unit_lattice, [1.0, 2.0], grid_step=0.5, margin=4.0)
    for entry in estimate['estimates']:
        assert entry['classes'] == 1
        assert entry['M'] <= math.sqrt(2) / 2 + 1e-9
        assert not entry['censored']
    assert estimate['L_hat'] is not None


@pytest.mark.parametrize('r', [1.0, 1.3, 2.7])
def test_repetitivity_of_lattice_reaches_deep_holes(unit_lattice, r):
    entry = repetitivity_estimate(unit_lattice, [r], grid_step=0.5, margin=4.0)['estimates'][0]
    assert entry['M'] == pytest.approx(math.sqrt(2) / 2)


def test_count_tiles_on_block_patch(block3_patch, square_region):
    counts = count_tiles(block3_patch, 0, square_region)
    assert counts == {'inside': 16, 'boundary': 20}
    supertiles = count_tiles(block3_patch, 1, GridRegion.box(3.0, (1, 1), (3, 3)))
    assert supertiles == {'inside': 4, 'boundary': 12}


def test_barycenter_sandwich(block3_patch, chair_patch, chair_points, square_region):
    result = barycenter_sandwich(delone_set(block3_patch), block3_patch, square_region)
    assert result['ok'] and result['points'] == 16
    region = GridRegion.box(2.0, (1, 1), (6, 4))
    assert barycenter_sandwich(chair_points, chair_patch, region)['ok']


def test_boundary_count_bound_dominates(block3, block3_patch):
    stats = geometry_stats(block3, 0)
    assert stats.K == 32
    region = GridRegion.box(3.0, (1, 1), (5, 5))
    boundary = count_tiles(block3_patch, 0, region)['boundary']
    assert boundary <= boundary_count_bound(stats, region)


def test_fitting_delta(chair_stats):
    assert fitting_delta(chair_stats) == pytest.approx(2 * math.sqrt(2) * 129)


def test_check_fits(block3, block3_patch):
    stats = geometry_stats(block3, 0)
    good = check_fits(block3_patch, stats, [GridRegion.box(3.0, (1, 1), (5, 5))])
    assert good.passed
    small = check_fits(block3_patch, stats, [GridRegion.box(3.0, (2, 2), (3, 3))])
    assert {v['name'] for v in small.violations} == {'component_meets_more_than_K'}


def test_hat_identity_on_block_patch(block3_patch):
    ring = GridRegion.box(3.0, (1, 1), (6, 6)).difference(GridRegion(3.0, [(3, 3)]))
    hat = hat_completion(ring)[0]
    result = hat_identity(block3_patch, hat)
    assert result['N_hat'] == 225
    assert result['N_component'] == 216
    assert result['N_holes'] == 9
    assert result['straddle'] == 0
    assert result['identity'] and result['sandwich']
