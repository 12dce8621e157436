import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix

from delone_rectifier.constructions.rectifier import (bounded_displacement_match, covering_radius,
                                                      density_from_points, hall_certificate,
                                                      lattice_in_window, match_at_radius, match_sweep,
                                                      measure_bilipschitz, rectify)
from delone_rectifier.core.patch import DeloneSetWindow, delone_set, generate, lattice_points
from delone_rectifier.core.utils import FlattenerError, MatchingError, PreconditionError

SHIFT = math.hypot(0.3, 0.2)


def shifted_lattice(size=10):
    return lattice_points((0, 0, size, size), offset=(0.3, 0.2))


def test_covering_radius(unit_lattice):
    assert covering_radius(unit_lattice) == pytest.approx(math.sqrt(2) / 2)
    undeclared = DeloneSetWindow(unit_lattice.points, unit_lattice.window)
    assert 0.5 < covering_radius(undeclared) <= math.sqrt(2) / 2 + 1e-9


def test_density_from_points(unit_lattice):
    density = density_from_points(unit_lattice)
    assert density.cell == 2.0
    assert density.m == 4
    assert np.all(density.values == 1.0)
    with pytest.raises(PreconditionError):
        density_from_points(unit_lattice, cell=0.5)
    with pytest.raises(PreconditionError):
        density_from_points(unit_lattice, m=5)


def test_lattice_in_window():
    assert len(lattice_in_window(1.0, (0, 0, 3, 2))) == 12
    assert len(lattice_in_window(0.5, (0.1, 0.1, 1.0, 1.0))) == 4


def test_match_at_radius():
    points = shifted_lattice()
    matching = match_at_radius(points, 1.0, 0.5)
    assert matching.perfect
    assert matching.max_displacement == pytest.approx(SHIFT)
    assert matching.deficiency['value'] == 0

    short = match_at_radius(points, 1.0, 0.3)
    assert not short.perfect
    assert short.deficiency['value'] == max(len(short.unmatched_points), len(short.unmatched_lattice))
    assert short.deficiency['lattice']['deficiency'] == len(short.unmatched_lattice)


def test_match_requires_window_for_arrays():
    with pytest.raises(PreconditionError):
        match_at_radius(np.zeros((3, 2)), 1.0, 0.5)
    with pytest.raises(PreconditionError):
        match_at_radius(shifted_lattice(), 0.0, 0.5)


def test_hall_certificate():
    graph = csr_matrix(np.array([[1, 0], [1, 0], [1, 0]], dtype=np.int8))
    cert = hall_certificate(graph, np.array([0, -1, -1]))
    assert cert['set_size'] == 3
    assert cert['neighbourhood_size'] == 1
    assert cert['deficiency'] == 2
    assert cert['members'] == [0, 1, 2]


def test_bounded_displacement_match():
    matching = bounded_displacement_match(shifted_lattice(), 1.0)
    assert matching.perfect
    assert SHIFT - 1e-9 <= matching.radius <= SHIFT + 1e-3 + 1e-9
    assert all(f['deficiency'] > 0 for f in matching.failures)
    rows = matching.rows()
    assert len(rows) == len(matching.pairs)
    assert set(rows[0]) == {'x', 'y', 'z1', 'z2', 'displacement'}


def test_matching_error_carries_deficiency():
    lattice = lattice_points((0, 0, 20, 20))
    even = DeloneSetWindow(lattice.points[lattice.points[:, 0] % 2 == 0], lattice.window)
    with pytest.raises(MatchingError) as info:
        bounded_displacement_match(even, 1.0, D_cap=1.0)
    assert info.value.deficiency['value'] > 0


def test_density_mismatch_never_matches():
    deficiencies = []
    for size in (16, 32, 48):
        with pytest.raises(MatchingError) as info:
            bounded_displacement_match(lattice_points((0, 0, size, size)), 2.0)
        assert info.value.matching.radius == pytest.approx(size / 8)
        deficiencies.append(info.value.deficiency['value'])
        assert deficiencies[-1] >= 0.25 * size ** 2
    assert deficiencies == sorted(deficiencies) and deficiencies[0] < deficiencies[-1]


def test_window_fraction_is_validated():
    with pytest.raises(PreconditionError):
        bounded_displacement_match(shifted_lattice(), 1.0, window_fraction=0.5)


def test_match_sweep():
    results = match_sweep([shifted_lattice(8), shifted_lattice(12)], 1.0, jobs=2)
    assert [m.perfect for m in results] == [True, True]
    assert len(results[1].pairs) > len(results[0].pairs)


def test_measure_bilipschitz(rng):
    sources = rng.uniform(0, 10, (50, 2))
    assert measure_bilipschitz(sources, sources) == pytest.approx(1.0)
    assert measure_bilipschitz(sources, 2.0 * sources) == pytest.approx(2.0)
    assert measure_bilipschitz(sources, 2.0 * sources, max_pairs=10) == pytest.approx(2.0)
    collapsed = sources.copy()
    collapsed[1] = collapsed[0]
    assert measure_bilipschitz(sources, collapsed) == math.inf
    with pytest.raises(PreconditionError):
        measure_bilipschitz(collapsed, sources)
    with pytest.raises(PreconditionError):
        measure_bilipschitz(sources[:1], sources[:1])


def test_rectify_lattice(unit_lattice):
    result = rectify(unit_lattice)
    assert result.rho_hat == 1.0
    assert result.scale == 1.0
    assert result.matching.perfect
    assert result.matching.max_displacement == 0.0
    assert result.matching.radius <= 1e-3
    assert result.K_bilip == pytest.approx(1.0)
    assert result.volume['ok']
    assert result.to_dict()['displacement_bound'] == result.matching.radius


def test_rectify_rejects_density_mismatch(unit_lattice):
    with pytest.raises(FlattenerError) as info:
        rectify(unit_lattice, rho_hat=2.0)
    assert info.value.diagnostics['mismatch'] == pytest.approx(0.5)


@pytest.mark.slow
def test_rectify_chair(chair):
    points = delone_set(generate(chair, depth=5))
    result = rectify(points, density_mismatch=0.2)
    assert result.density.cell == 3.0
    assert result.density.m == 3
    assert result.matching.perfect
    assert math.isfinite(result.K_bilip)
    assert len(result.sources) == len(result.images) > 0


@pytest.mark.slow
def test_chair_displacement_is_stable(chair_points_deep):
    beta = math.sqrt(3.0)
    radii = [bounded_displacement_match(chair_points_deep.points, beta, (0, 0, size, size),
                                        window_fraction=0.25).radius
             for size in (32, 64, 128)]
    assert radii[2] <= 1.1 * radii[1] <= 1.21 * radii[0]

    # Lattice spacing 20% too wide, at a radius that suffices for the true spacing.
    cap = 1.1 * max(radii[1:])
    windows = [(0, 0, 64, 64), (0, 0, 128, 128), (0, 0, 256, 128)]
    per_area = []
    for window in windows:
        with pytest.raises(MatchingError) as info:
            bounded_displacement_match(chair_points_deep.points, 1.2 * beta, window, D_cap=cap)
        deficiency = info.value.deficiency['value']
        assert deficiency > 0
        per_area.append(deficiency / ((window[2] - window[0]) * (window[3] - window[1])))
    assert per_area == sorted(per_area)


@pytest.mark.slow
def test_chair_bilipschitz_is_stable(chair_points_deep):
    constants = []
    for size in (32, 64, 128):
        window = DeloneSetWindow(chair_points_deep.points, (0, 0, size, size),
                                 chair_points_deep.r, chair_points_deep.R)
        result = rectify(window, density_mismatch=0.2)
        assert result.matching.perfect
        constants.append(result.K_bilip)
    assert all(math.isfinite(k) for k in constants)
    assert constants[2] <= 1.2 * constants[1] <= 1.44 * constants[0]
