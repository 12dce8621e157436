import numpy as np
import pytest

from delone_rectifier.constructions.flattener import (DensityField, RYStepParams, alpha_ratios,
                                                      blend_mean, boundary_identity_check, build_flatmap,
                                                      calibrate_c_eta, cube_volumes, e_values,
                                                      eta_star_bound, extend_identity, flatten_diagnostics,
                                                      interface_height, jacobian_fd, lipschitz_estimate,
                                                      max_blend_width, roundtrip_check, ry_step, ry_step_inv,
                                                      step_constant_products, telescoping_check, volume_check)
from delone_rectifier.core.utils import FlattenerError, PreconditionError

TWO_BY_TWO = [[1.0, 2.0], [3.0, 4.0]]


@pytest.fixture(scope='module')
def rough_density():
    return DensityField(1.0 + np.random.default_rng(7).uniform(0.0, 1.0, (8, 8)))


@pytest.fixture(scope='module')
def rough_map(rough_density):
    return build_flatmap(rough_density, 0.125)


def test_density_field_validation():
    with pytest.raises(PreconditionError):
        DensityField([1.0, 2.0])
    with pytest.raises(PreconditionError):
        DensityField(np.ones((3, 3)))
    with pytest.raises(PreconditionError):
        DensityField([[1.0, 0.0], [1.0, 1.0]])
    density = DensityField(TWO_BY_TWO, origin=(4, 4))
    assert density.m == 1 and density.side == 2
    assert density.mean == pytest.approx(2.5)
    assert density.cube_bounds()[1].tolist() == [6.0, 6.0]
    assert density.value_at(np.array([[5.5, 4.5]]))[0] == 3.0


def test_alpha_ratios():
    density = DensityField(TWO_BY_TWO)
    assert alpha_ratios(density, 1, (0, 0), 1, (0,))['alpha'] == pytest.approx(0.25)
    assert alpha_ratios(density, 1, (0, 0), 1, (1,))['alpha'] == pytest.approx(1 / 3)
    split_y = alpha_ratios(density, 1, (0, 0), 2)
    assert split_y['alpha'] == pytest.approx(0.4)
    assert split_y['beta'] == pytest.approx(0.6)
    with pytest.raises(PreconditionError):
        alpha_ratios(density, 2, (0, 0), 1, (0,))
    with pytest.raises(PreconditionError):
        alpha_ratios(density, 1, (0, 0), 1)
    with pytest.raises(PreconditionError):
        alpha_ratios(density, 1, (0, 0), 3)


def test_interface_height():
    assert blend_mean(0.125, 2) == pytest.approx(0.875)
    assert interface_height(0.5, 0.125, 2) == 0.5
    assert interface_height(0.25, 0.125, 2) == pytest.approx(0.5 - 0.25 / 0.875)
    assert max_blend_width(0.1, 2) == pytest.approx(0.2, abs=1e-9)
    assert max_blend_width(0.5, 2) == 0.5


def test_step_parameters_are_validated():
    with pytest.raises(PreconditionError):
        RYStepParams(axis=0, alpha=0.0, beta=1.0, blend_width=0.1, origin=(0.0, 0.0), size=(1.0, 1.0))
    with pytest.raises(PreconditionError):
        RYStepParams(axis=0, alpha=0.4, beta=0.6, blend_width=0.6, origin=(0.0, 0.0), size=(1.0, 1.0))
    with pytest.raises(FlattenerError) as info:
        RYStepParams(axis=0, alpha=0.1, beta=0.9, blend_width=0.5, origin=(0.0, 0.0), size=(1.0, 1.0))
    assert info.value.diagnostics['max_blend_width'] == pytest.approx(0.2, abs=1e-9)


def test_single_step_moves_mass():
    params = RYStepParams(axis=1, alpha=0.3, beta=0.7, blend_width=0.125, origin=(0.0, 0.0), size=(1.0, 1.0))
    xs = (np.arange(100_000) + 0.5) / 100_000
    interface = ry_step(params, np.column_stack([xs, np.full_like(xs, 0.5)]))
    assert np.all(interface[:, 0] == xs)
    assert interface[:, 1].mean() == pytest.approx(0.3, abs=1e-4)

    faces = np.array([[0.3, 0.0], [0.3, 1.0], [0.0, 0.3], [1.0, 0.7]])
    assert np.array_equal(ry_step(params, faces), faces)

    points = np.random.default_rng(0).uniform(0, 1, (500, 2))
    assert np.allclose(ry_step_inv(params, ry_step(params, points)), points, atol=1e-12)
    with pytest.raises(PreconditionError):
        ry_step(params, np.array([1.5, 0.5]))


def test_uniform_density_gives_identity():
    flatmap = build_flatmap(DensityField(np.full((4, 4), 2.0)))
    points = np.random.default_rng(1).uniform(0, 4, (200, 2))
    assert np.array_equal(flatmap(points), points)
    assert np.allclose(cube_volumes(flatmap), 1.0)


def test_build_flatmap_rejects_wide_blend():
    steep = DensityField([[1.0, 1.0], [100.0, 100.0]])
    with pytest.raises(FlattenerError) as info:
        build_flatmap(steep, 0.125)
    assert info.value.diagnostics['max_blend_width'] == pytest.approx(2 / 101, abs=1e-9)
    assert build_flatmap(steep, 0.01).m == 1


def test_boundary_and_roundtrip(rough_map):
    assert boundary_identity_check(rough_map, per_face=200)['ok']
    assert roundtrip_check(rough_map, count=5000)['ok']


def test_points_outside_cube(rough_map):
    outside = np.array([[-1.0, 3.0], [9.0, 9.0]])
    with pytest.raises(PreconditionError):
        rough_map.evaluate(outside)
    extended = extend_identity(rough_map)
    assert np.array_equal(extended(outside), outside)
    assert np.array_equal(extended.inverse(outside), outside)


def test_cube_volumes_partition_the_cube(rough_map):
    boundary = cube_volumes(rough_map, 'boundary', resolution=16)
    assert boundary.shape == (8, 8)
    assert boundary.sum() == pytest.approx(64.0, rel=1e-9)
    grid = cube_volumes(rough_map, 'grid', resolution=8)
    assert grid.sum() == pytest.approx(64.0, rel=1e-9)
    with pytest.raises(PreconditionError):
        cube_volumes(rough_map, 'shoelace')


def test_monte_carlo_volumes():
    flatmap = build_flatmap(DensityField(np.ones((2, 2))))
    volumes = cube_volumes(flatmap, 'mc', samples=200_000, seed=3, jobs=2)
    assert np.all(np.abs(volumes - 1.0) < 0.05)


def test_volume_and_telescoping_checks(rough_map):
    volumes = volume_check(rough_map, resolution=16)
    assert volumes['ok']
    assert volumes['tol_vol'] == pytest.approx(5 * 2 * 3 * 0.125)
    telescoping = telescoping_check(rough_map, resolution=16)
    assert [row['level'] for row in telescoping['levels']] == [1, 2, 3]
    assert telescoping['ok']


def test_jacobian_in_the_core():
    flatmap = build_flatmap(DensityField(TWO_BY_TWO), 0.125)
    jac = jacobian_fd(flatmap, (0.8, 0.5))
    assert jac.target == pytest.approx(0.4)
    assert jac.ideal_det == pytest.approx(0.4)
    assert jac.det == pytest.approx(jac.core_det, rel=1e-5)


def test_jacobian_rejects_non_smooth_points():
    flatmap = build_flatmap(DensityField(TWO_BY_TWO), 0.125)
    with pytest.raises(FlattenerError) as info:
        jacobian_fd(flatmap, (1.0, 0.5))
    assert info.value.diagnostics['reason'] == 'split interface'
    with pytest.raises(FlattenerError) as info:
        jacobian_fd(flatmap, (0.8, 0.05))
    assert info.value.diagnostics['reason'] == 'blend collar'


def test_eta_star_bound():
    density = DensityField(TWO_BY_TWO)
    assert e_values(density) == pytest.approx({1: 2.5, 2: 1.0})
    eta = eta_star_bound(density)
    assert eta.measured == pytest.approx(0.25)
    assert eta.analytic == pytest.approx(0.08)
    assert eta.ok and eta.bracket_ok


def test_lipschitz_of_identity():
    flatmap = build_flatmap(DensityField(np.ones((4, 4))))
    estimate = lipschitz_estimate(flatmap, c_eta=1.0)
    assert estimate.K_fwd == pytest.approx(1.0)
    assert estimate.K_inv == pytest.approx(1.0)
    assert estimate.K_id_bound == 1.0
    assert estimate.within_bound
    with pytest.raises(PreconditionError):
        lipschitz_estimate(flatmap, samples=2, c_eta=1.0)


def test_step_constant_products_and_calibration(rough_density):
    c_eta = calibrate_c_eta(0.125, 2, 0.25, points=200)
    assert 0.0 < c_eta < np.inf
    rows = step_constant_products(rough_density, c_eta)
    assert [row['m'] for row in rows] == [1, 2, 3]
    assert all(row['K'] >= 1.0 for row in rows)
    assert rows[-1]['prod_K'] == pytest.approx(np.prod([row['K'] for row in rows]))


def test_flatten_diagnostics(rough_density):
    flatmap = build_flatmap(DensityField(rough_density.values[:4, :4]))
    diagnostics = flatten_diagnostics(flatmap, resolution=16, roundtrip_points=1000)
    assert diagnostics['ok']
    assert diagnostics['volume_errors'].shape == (4, 4)
    assert set(diagnostics) >= {'map', 'volumes', 'telescoping', 'eta_star', 'lipschitz', 'step_products'}


@pytest.mark.slow
def test_lower_slab_volume():
    # Lower row u = 1, upper row u = 3: the lower slab carries 2/8 of the mass.
    flatmap = build_flatmap(DensityField([[1.0, 3.0], [1.0, 3.0]]))
    exact = cube_volumes(flatmap, 'boundary', resolution=64)
    assert exact[:, 0].sum() == pytest.approx(1.0, abs=1e-3)
    sampled = cube_volumes(flatmap, 'mc', samples=1_000_000, seed=0)
    assert sampled.sum() == pytest.approx(4.0)
    assert sampled[:, 0].sum() == pytest.approx(1.0, abs=5e-3)


@pytest.mark.slow
def test_volume_errors_halve_with_blend_width(rough_density):
    errors = [volume_check(build_flatmap(rough_density, w), resolution=64)['errors'].mean()
              for w in (1 / 4, 1 / 8, 1 / 16)]
    assert errors[0] > 0
    for wide, narrow in zip(errors, errors[1:]):
        assert 0.3 <= narrow / wide <= 0.7
