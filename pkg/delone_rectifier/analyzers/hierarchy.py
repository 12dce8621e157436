"""
Hierarchical decomposition of grid regions and verification of the supertile bound chain.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import shapely

from ..core.patch import DeloneSetWindow, GeometryStats, HierarchicalPatch, geometry_stats
from ..core.report import BoundReport
from ..core.utils import PreconditionError, SpectralError, parallel_map
from .counting import (barycenter_sandwich, boundary_count_bound, check_fits, count_points,
                       tile_masks, tiles_meeting, _tile_tree)
from .regions import GridRegion, hat_completion, random_connected_region, region_grid_limits
from .spectral import (SpectralReport, SubstitutionMatrix, default_rho, perron_deviation,
                       tile_density)

logger = logging.getLogger(__name__)


@dataclass
class HierDecomposition:
    """Parts U_0..U_{m-1} of a region, as tile indices per level."""

    region: GridRegion
    m: int
    parts: Dict[int, np.ndarray]
    inside_counts: List[int]
    boundary_counts: List[int]
    invariants: Dict[str, bool] = field(default_factory=dict)
    forced: bool = False
    fits: Optional[bool] = None
    role: str = 'region'
    pieces: List['HierDecomposition'] = field(default_factory=list)

    @property
    def part_sizes(self) -> List[int]:
        return [int(len(self.parts.get(l, []))) for l in range(self.m)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'm': self.m,
            'parts': {str(l): idx.tolist() for l, idx in self.parts.items()},
            'part_sizes': self.part_sizes,
            'inside_counts': self.inside_counts,
            'boundary_counts': self.boundary_counts,
            'invariants': self.invariants,
            'forced': self.forced,
            'fits': self.fits,
            'role': self.role,
            'pieces': [{'role': p.role, 'cells': len(p.region), 'm': p.m, 'part_sizes': p.part_sizes,
                        'invariants': p.invariants} for p in self.pieces]
        }


def descendant_ranges(patch: HierarchicalPatch) -> List[np.ndarray]:
    """
    Level-0 index range [lo, hi) of every tile's descendants, per level.

    Children are stored contiguously in parent order, so descendants form one range.
    """
    ranges = [np.column_stack([np.arange(patch.tile_count(0)), np.arange(1, patch.tile_count(0) + 1)])]
    for level in range(1, patch.depth + 1):
        below = ranges[-1]
        rows = np.array([[below[s][0], below[e - 1][1]] for s, e in patch.child_ranges[level]],
                        dtype=np.int64).reshape(-1, 2)
        ranges.append(rows)
    return ranges


def _parent_indices(patch: HierarchicalPatch, level: int) -> np.ndarray:
    return np.array([t.parent if t.parent is not None else -1 for t in patch.tiles(level)], dtype=np.int64)


def decompose(patch: HierarchicalPatch, region: GridRegion, stats: Optional[GeometryStats] = None,
              force: bool = False) -> HierDecomposition:
    """
    U_l = level-l tiles inside U whose parent is not inside U, for l < m.

    When U or its boundary is disconnected, every hat-completed component and each of its
    holes is decomposed as well and attached as ``pieces``; each piece has a connected boundary.

    Args:
        patch: Generated patch whose window contains the region
        region: Grid region
        stats: Level-0 geometry stats (needed for the fits check)
        force: Skip the fits-with-delta precondition (result is flagged)

    Returns:
        HierDecomposition with invariants re-verified on level-0 descendant sets
    """
    fits = None
    if stats is not None:
        fits = check_fits(patch, stats, [region]).passed
        if not fits and not force:
            raise PreconditionError(f"delta={region.delta} does not fit the tiling for this region "
                                    f"(pass force=True to decompose anyway)")
    elif not force:
        raise PreconditionError("geometry stats are required unless force=True")

    dec = _decompose(patch, region, fits, force)
    if dec.m == 0:
        raise PreconditionError(f"region contains no level-0 tile; delta={region.delta} too small")
    if not (region.is_connected() and region.has_connected_boundary()):
        for hat in hat_completion(region):
            dec.pieces.append(_decompose(patch, hat.filled, fits, force, role='filled'))
            dec.pieces.extend(_decompose(patch, hole, fits, force, role='hole') for hole in hat.holes)
        dec.invariants['pieces_valid'] = all(ok for piece in dec.pieces
                                             for name, ok in piece.invariants.items() if name != 'm_within_depth')
        logger.debug(f"Decomposed {len(dec.pieces)} hat-completed pieces")
    if not all(dec.invariants.values()):
        logger.warning(f"Decomposition invariants failed: {dec.invariants}")
    return dec


def _decompose(patch: HierarchicalPatch, region: GridRegion, fits: Optional[bool], force: bool,
               role: str = 'region') -> HierDecomposition:
    inside, boundary = [], []
    for level in range(patch.depth + 1):
        ins, bnd = tile_masks(patch, level, region)
        inside.append(ins)
        boundary.append(bnd)

    m = next((l for l in range(patch.depth + 1) if not inside[l].any()), patch.depth + 1)
    parts: Dict[int, np.ndarray] = {}
    for level in range(m):
        if level < patch.depth:
            parents = _parent_indices(patch, level)
            parent_in = inside[level + 1][parents]
        else:
            parent_in = np.zeros_like(inside[level])
        parts[level] = np.flatnonzero(inside[level] & ~parent_in)

    dec = HierDecomposition(
        region=region, m=m, parts=parts,
        inside_counts=[int(x.sum()) for x in inside],
        boundary_counts=[int(x.sum()) for x in boundary],
        forced=force and not fits, fits=fits, role=role
    )
    dec.invariants = _verify_invariants(patch, dec, inside)
    return dec


def _verify_invariants(patch: HierarchicalPatch, dec: HierDecomposition,
                       inside: List[np.ndarray]) -> Dict[str, bool]:
    ranges = descendant_ranges(patch)
    covered = np.zeros(patch.tile_count(0), dtype=np.int64)
    for level, idx in dec.parts.items():
        for lo, hi in ranges[level][idx]:
            covered[lo:hi] += 1
    union_ok = bool(np.array_equal(covered > 0, inside[0]))
    disjoint_ok = bool(covered.max(initial=0) <= 1)

    no_parent_ok = True
    for level, idx in dec.parts.items():
        if level >= patch.depth:
            continue
        in_part = np.zeros(patch.tile_count(level), dtype=bool)
        in_part[idx] = True
        for start, end in patch.child_ranges[level + 1]:
            if end > start and in_part[start:end].all():
                no_parent_ok = False
                break

    top_ok = dec.m > patch.depth or not inside[dec.m].any()
    return {
        'union_equals_contained_tiles': union_ok,
        'pairwise_disjoint': disjoint_ok,
        'no_higher_tile_in_part': no_parent_ok,
        'no_level_m_tile': bool(top_ok),
        'm_within_depth': dec.m <= patch.depth
    }


def verify_bounds(dec: HierDecomposition, matrix: SubstitutionMatrix, stats: GeometryStats,
                  lam: float) -> BoundReport:
    """
    Check N(T^l, U_l) <= ||M||_1 L(T^(l+1), dU) and lambda^(m-l-1) <= (R/r) L(T^l, dU).

    Also reports l_0 (largest level with L > K) and N_T = (K R / r) (lambda / (lambda - 1)).
    """
    report = BoundReport('hierarchy')
    one_norm = int(matrix.entries.sum(axis=1).max())
    for name, passed in dec.invariants.items():
        if name != 'm_within_depth':
            report.add_check(f"invariant_{name}", passed)

    _level_checks(report, dec, one_norm, stats, lam)
    for index, piece in enumerate(dec.pieces):
        _level_checks(report, piece, one_norm, stats, lam, prefix=f"piece[{index}] {piece.role} ")

    over = [l for l, count in enumerate(dec.boundary_counts) if count > stats.K]
    l0 = max(over) if over else -1
    report.add_value('l_0', l0)
    report.add_value('N_T', stats.K * stats.R / stats.r * lam / (lam - 1))
    report.add_value('m', dec.m)
    report.add_value('one_norm', one_norm)
    return report


def _level_checks(report: BoundReport, dec: HierDecomposition, one_norm: int, stats: GeometryStats,
                  lam: float, prefix: str = '') -> None:
    depth = len(dec.boundary_counts) - 1
    for level in range(dec.m):
        n_part = len(dec.parts[level])
        if level + 1 <= depth:
            bound = one_norm * dec.boundary_counts[level + 1]
            report.add_check('boundary_growth', n_part <= bound, f"{prefix}l={level}",
                             {'N_part': n_part, 'bound': bound})
        else:
            report.add_note(f"{prefix}boundary_growth at l={level} needs level {level + 1} beyond the patch depth")
        lhs = lam ** (dec.m - level - 1)
        rhs = stats.R / stats.r * dec.boundary_counts[level]
        report.add_check('lambda_m', lhs <= rhs * (1 + 1e-12), f"{prefix}l={level}", {'lhs': lhs, 'rhs': rhs})


def ball_meet_check(patch: HierarchicalPatch, level: int, stats: GeometryStats, trials: int = 200,
                    seed: Optional[int] = 0, centers: Optional[np.ndarray] = None) -> Dict[str, Any]:
    """
    Largest number of level-l tiles met by a closed ball of radius 2R_l.

    Centers are sampled in the window shrunk by 2R_l unless given.
    """
    lam = patch.rule.lam_float if patch.rule else 1.0
    radius = 2.0 * stats.R * lam ** (level - stats.level)
    if centers is None:
        if trials <= 0:
            return {'max_tiles': 0, 'K': stats.K, 'ok': True, 'trials': 0, 'radius': radius}
        x0, y0, x1, y1 = patch.window()
        if x1 - x0 <= 2 * radius or y1 - y0 <= 2 * radius:
            raise PreconditionError(f"window {patch.window()} too small for balls of radius {radius}")
        rng = np.random.default_rng(seed)
        centers = np.column_stack([rng.uniform(x0 + radius, x1 - radius, trials),
                                   rng.uniform(y0 + radius, y1 - radius, trials)])
    tree, _ = _tile_tree(patch, level)
    worst = 0
    for center in np.asarray(centers, dtype=float).reshape(-1, 2):
        hits = tree.query(shapely.Point(center), predicate='dwithin', distance=radius + 1e-9)
        worst = max(worst, int(len(hits)))
    return {'max_tiles': worst, 'K': stats.K, 'ok': worst <= stats.K,
            'trials': int(len(centers)), 'radius': radius}


def curve_diam_check(patch: HierarchicalPatch, level: int, curve: np.ndarray,
                     stats: GeometryStats) -> Dict[str, Any]:
    """diam(curve) <= 2 R_l L(T^l, curve) for a polyline given as an (n, 2) array."""
    curve = np.asarray(curve, dtype=float).reshape(-1, 2)
    lam = patch.rule.lam_float if patch.rule else 1.0
    R_level = stats.R * lam ** (level - stats.level)
    diff = curve[:, None, :] - curve[None, :, :]
    diam = float(np.sqrt(np.max(np.sum(diff * diff, axis=-1))))
    geometry = shapely.Point(curve[0]) if len(curve) == 1 else shapely.LineString(curve)
    met = len(tiles_meeting(patch, level, geometry))
    return {'diam': diam, 'L': met, 'ok': diam <= 2.0 * R_level * met + 1e-9}


def level_ratio_check(patch: HierarchicalPatch, component: Any, level: int, coarse_level: int,
                      stats: GeometryStats) -> Dict[str, Any]:
    """
    L(T', C) <= (2K + 1)(R_T / R_T') L(T, C) for T = T^level, T' = T^coarse_level.

    Reported as not applicable unless R_T' > R_T and K < L(T', C) <= L(T, C).
    """
    lam = patch.rule.lam_float if patch.rule else 1.0
    R_fine = stats.R * lam ** (level - stats.level)
    R_coarse = stats.R * lam ** (coarse_level - stats.level)
    fine = len(tiles_meeting(patch, level, component))
    coarse = len(tiles_meeting(patch, coarse_level, component))
    applicable = R_coarse > R_fine and stats.K < coarse <= fine
    result: Dict[str, Any] = {'L_l': fine, 'L_l_prime': coarse, 'applicable': applicable}
    if applicable:
        bound = (2 * stats.K + 1) * (R_fine / R_coarse) * fine
        result.update({'bound': bound, 'ok': coarse <= bound})
    else:
        result['ok'] = 'not applicable'
    return result


def _tile_areas(patch: HierarchicalPatch, level: int, mask: np.ndarray) -> float:
    polygons = patch.polygons(level)
    return float(sum(shapely.area(shapely.Polygon(polygons[i])) for i in np.flatnonzero(mask)))


def discrepancy_via_hierarchy(patch: HierarchicalPatch, matrix: SubstitutionMatrix,
                              report: SpectralReport, region: GridRegion,
                              stats: Optional[GeometryStats] = None, rho: Optional[float] = None,
                              alpha: Optional[float] = None, force: bool = False,
                              points: Optional[DeloneSetWindow] = None,
                              decomposition: Optional[HierDecomposition] = None) -> Dict[str, Any]:
    """
    |N(T, U) - alpha mu(U)| against the assembled budget (K_hat + alpha (2R)^d) L(T, dU).

    The chain |N(T, U_T) - alpha mu(U_T)| <= supertile_sum <= boundary_sum <= K_hat L(T, dU)
    is reported stage by stage, with the tile-volume correction |mu(U) - mu(U_T)| <= (2R)^d L(T, dU).

    Args:
        patch: Generated patch
        matrix: Substitution matrix of the patch's rule
        report: Its spectral report
        region: Grid region
        stats: Level-0 geometry stats (computed if missing)
        rho: Decay rate for the Perron deviation (default (r + lambda) / 2)
        alpha: Density override (negative controls)
        force: Decompose even when delta does not fit
        points: Delone window, for the points-level bound
        decomposition: Precomputed decomposition

    Returns:
        Dictionary of quantities and pass/fail flags
    """
    if not report.thm2_applicable:
        raise SpectralError(f"r(M)={report.r} is not below lambda; the hierarchy bound does not apply")
    lam = matrix.lam_float
    stats = stats or geometry_stats(patch, 0)
    d = region.dimension
    pf = perron_deviation(matrix, report, rho=rho, l_max=max(patch.depth, 1))
    rho = pf.rho
    density = tile_density(matrix, report)
    alpha = density if alpha is None else alpha
    dec = decomposition or decompose(patch, region, stats, force=force)

    inside0, _ = tile_masks(patch, 0, region)
    n_tiles = int(inside0.sum())
    L0 = dec.boundary_counts[0]
    mu_U = region.measure()
    mu_UT = _tile_areas(patch, 0, inside0)
    lhs = abs(n_tiles - alpha * mu_U)

    ranges = descendant_ranges(patch)
    partition = sum(int((ranges[l][idx][:, 1] - ranges[l][idx][:, 0]).sum()) for l, idx in dec.parts.items())

    one_norm = int(matrix.entries.sum(axis=1).max())
    K, R, r = stats.K, stats.R, stats.r
    over = [l for l, count in enumerate(dec.boundary_counts) if count > K]
    l0 = max(over) if over else 0
    n_T = K * R / r * lam / (lam - 1)
    geometric = sum((rho / lam) ** l for l in range(l0))
    K_hat = pf.K * one_norm * (2 * K + 1) * ((2 * K + 1) * geometric + n_T)

    supertile_sum = sum(len(dec.parts[l]) * pf.K * rho ** l for l in range(dec.m))
    boundary_sum = sum(pf.K * one_norm * dec.boundary_counts[l + 1] * rho ** l
               for l in range(dec.m) if l + 1 < len(dec.boundary_counts))
    final = K_hat * L0
    core_lhs = abs(n_tiles - alpha * mu_UT)
    volume_gap = abs(mu_U - mu_UT)
    volume_bound = (2 * R) ** d * L0
    rhs = (K_hat + alpha * (2 * R) ** d) * L0
    slack = 1e-9 * max(1.0, rhs)

    result: Dict[str, Any] = {
        'alpha': alpha,
        'alpha_tiles': density,
        'lhs': lhs,
        'rhs': rhs,
        'L': L0,
        'N_tiles': n_tiles,
        'empirical_K': lhs / L0 if L0 else None,
        'K0': pf.K,
        'rho': rho,
        'K_hat': K_hat,
        'l_0': l0,
        'N_T': n_T,
        'chain': {'core_lhs': core_lhs, 'supertile_sum': supertile_sum, 'boundary_sum': boundary_sum,
                  'final': final},
        'chain_ok': (core_lhs <= supertile_sum + slack and supertile_sum <= boundary_sum + slack
                     and boundary_sum <= final + slack),
        'volume_gap': volume_gap,
        'volume_bound': volume_bound,
        'volume_ok': volume_gap <= volume_bound + 1e-9,
        'partition_ok': partition == n_tiles,
        'ok': lhs <= rhs + slack
    }

    if points is not None:
        n_points = count_points(points, region)
        factor = K * (math.sqrt(d - 1) / (2 * R) + 1) ** (d - 1) * region.delta ** (-(d - 1))
        K_X = (K_hat + alpha * (2 * R) ** d + 1) * factor
        points_lhs = abs(n_points - alpha * mu_U)
        result['points'] = {'N_points': n_points, 'lhs': points_lhs, 'K_X': K_X,
                            'rhs': K_X * region.boundary_measure(),
                            'ok': points_lhs <= K_X * region.boundary_measure() + slack}
    return result


def discrepancy_points_bound(patch: HierarchicalPatch, matrix: SubstitutionMatrix,
                             report: SpectralReport, points: DeloneSetWindow, region: GridRegion,
                             stats: Optional[GeometryStats] = None, force: bool = False) -> Dict[str, Any]:
    """|N(X_T, U) - alpha mu(U)| <= K_X mu(dU) for the Delone set of tile centroids."""
    result = discrepancy_via_hierarchy(patch, matrix, report, region, stats, force=force, points=points)
    return result['points']


def verify_region(patch: HierarchicalPatch, matrix: SubstitutionMatrix, report: SpectralReport,
                  points: DeloneSetWindow, region: GridRegion, stats: GeometryStats,
                  force: bool = False, alpha: Optional[float] = None) -> Tuple[BoundReport, Dict[str, Any]]:
    """All per-region checks: decomposition, bounds, sandwich, boundary bound, discrepancy."""
    dec = decompose(patch, region, stats, force=force)
    bounds = verify_bounds(dec, matrix, stats, matrix.lam_float)

    sandwich = barycenter_sandwich(points, patch, region)
    bounds.add_check('barycenter_sandwich', sandwich['ok'], details=sandwich)

    L_bound = boundary_count_bound(stats, region)
    bounds.add_check('boundary_count_bound', dec.boundary_counts[0] <= L_bound + 1e-9,
                     details={'L': dec.boundary_counts[0], 'bound': L_bound})

    disc = discrepancy_via_hierarchy(patch, matrix, report, region, stats, alpha=alpha,
                                     force=force, points=points, decomposition=dec)
    bounds.add_check('discrepancy', disc['ok'], details={'lhs': disc['lhs'], 'rhs': disc['rhs']})
    bounds.add_check('bound_chain', disc['chain_ok'], details=disc['chain'])
    bounds.add_check('tile_volume_correction', disc['volume_ok'],
                     details={'gap': disc['volume_gap'], 'bound': disc['volume_bound']})
    bounds.add_check('partition', disc['partition_ok'])
    bounds.add_check('points_discrepancy', disc['points']['ok'], details=disc['points'])

    row = {
        'cells': len(region),
        'm': dec.m,
        'l_0': disc['l_0'],
        'lhs': disc['lhs'],
        'rhs': disc['rhs'],
        'margin': disc['rhs'] - disc['lhs'],
        'empirical_K': disc['empirical_K'],
        'forced': dec.forced,
        'violations': len(bounds.violations)
    }
    return bounds, row


def auto_delta(stats: GeometryStats) -> float:
    """Smallest integer delta >= 4R, so that every delta-cube contains a tile."""
    return float(math.ceil(4.0 * stats.R - 1e-9))


def fitted_regions(patch: HierarchicalPatch, stats: GeometryStats, count: int, n_cells: int,
                   delta: Optional[float] = None, seed: Optional[int] = 0,
                   max_attempts: Optional[int] = None) -> Tuple[List[GridRegion], Dict[str, Any]]:
    """
    Random connected regions inside the patch window that pass check_fits.

    Candidates failing any fits bullet are discarded; sampling stops after ``max_attempts``
    candidates (default 20 per requested region).

    Raises:
        PreconditionError: no candidate fits
    """
    delta = auto_delta(stats) if delta is None else float(delta)
    lower, upper = region_grid_limits(patch.window(), delta)
    rng = np.random.default_rng(seed)
    max_attempts = 20 * count if max_attempts is None else max_attempts
    regions: List[GridRegion] = []
    attempts = 0
    while len(regions) < count and attempts < max_attempts:
        attempts += 1
        candidate = random_connected_region(delta, n_cells, lower, upper, rng)
        if check_fits(patch, stats, [candidate]).passed:
            regions.append(candidate)
    summary = {'delta': delta, 'requested': count, 'fitted': len(regions), 'attempts': attempts}
    if not regions:
        raise PreconditionError(f"no sampled region fits the tiling at delta={delta} "
                                f"after {attempts} attempts")
    if len(regions) < count:
        logger.warning(f"Only {len(regions)} of {count} regions fit at delta={delta}")
    logger.info(f"Sampled {len(regions)} fitted regions at delta={delta} in {attempts} attempts")
    return regions, summary


def hierarchy_batch(patch: HierarchicalPatch, matrix: SubstitutionMatrix, report: SpectralReport,
                    points: DeloneSetWindow, regions: Sequence[GridRegion], stats: GeometryStats,
                    force: bool = False, ball_trials: int = 200, seed: Optional[int] = 0,
                    jobs: int = 1, progress: bool = False,
                    alpha: Optional[float] = None) -> Tuple[BoundReport, List[Dict[str, Any]]]:
    """
    Verify every region plus the ball-meet check; returns the merged report and per-region rows.

    ``alpha`` overrides the tile density in the discrepancy checks (negative controls).
    """
    for level in range(patch.depth + 1):
        for region_delta in sorted({r.delta for r in regions}):
            tile_masks(patch, level, GridRegion(region_delta, []))

    def run(item: Tuple[int, GridRegion]):
        return verify_region(patch, matrix, report, points, item[1], stats, force=force, alpha=alpha)

    outcomes = parallel_map(run, list(enumerate(regions)), jobs, desc='regions', progress=progress)
    merged = BoundReport(patch.rule.name if patch.rule else 'patch')
    rows = []
    for index, (bounds, row) in enumerate(outcomes):
        merged.merge(bounds, scope_prefix=f"region[{index}] ")
        row['region'] = index
        rows.append(row)

    ball = ball_meet_check(patch, 0, stats, trials=ball_trials, seed=seed)
    merged.add_check('ball_meet', ball['ok'], details=ball)
    return merged, rows
