"""
Point and tile counting on grid regions.
Density deviations, E-profiles, deviation-exponent fits, Laczkovich ratios,
repetitivity estimates and the fits-with-delta verifier.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from scipy import stats as scipy_stats
from scipy.spatial import cKDTree

from ..core.integral import sliding_box_sums, summed_area_table
from ..core.patch import DeloneSetWindow, GeometryStats, HierarchicalPatch
from ..core.report import BoundReport
from ..core.utils import PreconditionError, RegionError, RegressionError, ZeroCountError, parallel_map
from .regions import GridRegion, HatComponent

logger = logging.getLogger(__name__)

EDGE_TOL = 1e-9


# Points

def _cell_indices(points: np.ndarray, delta: float) -> np.ndarray:
    """Half-open cell index of every point (lower-closed)."""
    return np.floor(np.round(points / delta, 9)).astype(np.int64)


def _require_in_window(region: GridRegion, window: Sequence[int]) -> None:
    if region.is_empty():
        return
    x0, y0, x1, y1 = window
    if not region.within((x0, y0), (x1, y1)):
        lo, hi = region.bounds()
        raise RegionError(f"region {lo.tolist()}..{hi.tolist()} leaves the window {list(window)}")


def count_points(points: DeloneSetWindow, region: GridRegion) -> int:
    """
    Number of points in the half-open union of the region's cells.

    Args:
        points: Delone set window
        region: Grid region inside the window

    Returns:
        N(X, U)
    """
    _require_in_window(region, points.window)
    if region.is_empty():
        return 0
    lo, hi = region.bounds()
    p = points.points
    mask = np.all((p >= lo - EDGE_TOL) & (p < hi + EDGE_TOL), axis=1)
    cells = _cell_indices(p[mask], region.delta)
    return int(sum(1 for c in map(tuple, cells.tolist()) if c in region.cell_set))


def count_points_in_box(points: DeloneSetWindow, origin: Sequence[float], size: float) -> int:
    """Points in the half-open cube origin + [0, size)^2."""
    p = np.round(points.points, 9)
    lo = np.asarray(origin, dtype=float)
    mask = np.all((p >= lo) & (p < lo + size), axis=1)
    return int(mask.sum())


def density_deviation(points: DeloneSetWindow, origin: Sequence[float], size: float, rho: float) -> float:
    """
    e_rho(C) = max(rho mu(C) / N, N / (rho mu(C))) for the cube C = origin + [0, size)^2.
    """
    if rho <= 0:
        raise PreconditionError(f"rho must be positive, got {rho}")
    n = count_points_in_box(points, origin, size)
    if n == 0:
        raise ZeroCountError(f"zero count in cube {list(origin)}+{size}; density deviation undefined")
    expected = rho * size ** 2
    return max(expected / n, n / expected)


def unit_cell_counts(points: DeloneSetWindow) -> np.ndarray:
    """Point counts per unit cell of the window, indexed [x - x0, y - y0]."""
    x0, y0, x1, y1 = points.window
    counts = np.zeros((x1 - x0, y1 - y0), dtype=np.int64)
    cells = _cell_indices(points.points, 1.0) - np.array([x0, y0])
    keep = np.all((cells >= 0) & (cells < counts.shape), axis=1)
    np.add.at(counts, (cells[keep, 0], cells[keep, 1]), 1)
    return counts


@dataclass
class EProfileEntry:
    k: int
    E: float
    translates: int
    censored: bool
    empty_cube: bool

    def to_dict(self) -> Dict[str, Any]:
        return {'k': self.k, 'E': 'unbounded (empty cube)' if self.empty_cube else self.E,
                'translates': self.translates, 'censored': self.censored}


@dataclass
class EProfile:
    rho: float
    entries: List[EProfileEntry]
    partial_products: List[Tuple[int, float]] = field(default_factory=list)
    products_stop: Optional[int] = None

    def values(self) -> List[float]:
        return [e.E for e in self.entries]

    def to_dict(self) -> Dict[str, Any]:
        return {'rho': self.rho, 'entries': [e.to_dict() for e in self.entries],
                'partial_products': [[m, p] for m, p in self.partial_products],
                'products_stop': self.products_stop}


def e_profile(points: DeloneSetWindow, rho: float, k_list: Sequence[int],
              min_translates: int = 100) -> EProfile:
    """
    E_rho(k): supremum of e_rho over integer-translate cubes of side k inside the window.

    Also returns partial products of E_rho(2^m) over the dyadic sizes present in k_list,
    stopping before the first censored or unbounded size (recorded as products_stop).
    """
    if rho <= 0:
        raise PreconditionError(f"rho must be positive, got {rho}")
    table = summed_area_table(unit_cell_counts(points), dtype=np.int64)
    entries = []
    for k in k_list:
        sums = sliding_box_sums(table, int(k)).astype(float).ravel()
        translates = int(sums.size)
        censored = translates < min_translates
        if translates == 0:
            entries.append(EProfileEntry(int(k), math.nan, 0, True, False))
            continue
        if (sums == 0).any():
            entries.append(EProfileEntry(int(k), math.inf, translates, censored, True))
            continue
        expected = rho * k * k
        value = float(np.max(np.maximum(expected / sums, sums / expected)))
        entries.append(EProfileEntry(int(k), value, translates, censored, False))
        if censored:
            logger.warning(f"E({k}) is censored: only {translates} translates fit the window")

    products = []
    running = 1.0
    stop = None
    for entry in sorted(entries, key=lambda e: e.k):
        m = int(round(math.log2(entry.k))) if entry.k > 0 else -1
        if entry.k < 2 or 2 ** m != entry.k:
            continue
        if entry.censored or not math.isfinite(entry.E):
            stop = entry.k
            logger.warning(f"Partial products stop at k={entry.k}: E is censored or unbounded")
            break
        running *= entry.E
        products.append((m, running))
    return EProfile(rho=rho, entries=entries, partial_products=products, products_stop=stop)


@dataclass
class DensityFit:
    """Log-log fit of the maximum count deviation against cube size."""

    rho_hat: float
    delta_hat: Union[float, str]
    stderr: Optional[float]
    M_prime: Optional[float]
    l_min: int
    sizes: List[int]
    deviations: List[float]
    residuals: List[float]
    t_statistic: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rho_hat': self.rho_hat,
            'delta_hat': self.delta_hat,
            'stderr': self.stderr,
            'M_prime': self.M_prime,
            'l_min': self.l_min,
            'sizes': self.sizes,
            'deviations': self.deviations,
            'residuals': self.residuals,
            't_statistic': self.t_statistic
        }


def fit_deviation(points: DeloneSetWindow, min_sizes: int = 3, dimension: int = 2) -> DensityFit:
    """
    Estimate rho(X) and the deviation exponent delta(X).

    Regresses log max_C |N(X, C) - rho_hat mu(C)| on log l(C) over dyadic sizes
    2^3 .. 2^(floor(log2 W) - 1), W the smaller window side.
    """
    width, height = points.window_size
    side = min(width, height)
    if side < 64:
        raise RegressionError(f"window side {side} is below 64 units")
    counts = unit_cell_counts(points)
    rho_hat = float(counts.sum()) / float(width * height)
    table = summed_area_table(counts, dtype=np.int64)

    top = int(math.floor(math.log2(side))) - 1
    sizes = [2 ** m for m in range(3, top + 1)]
    if len(sizes) < min_sizes:
        raise RegressionError(f"only {len(sizes)} dyadic sizes fit; need {min_sizes}")
    deviations = []
    for k in sizes:
        sums = sliding_box_sums(table, k).astype(float)
        deviations.append(float(np.max(np.abs(sums - rho_hat * k ** dimension))))

    if all(dev <= 1e-9 for dev in deviations):
        logger.info("Counts match rho_hat exactly at every size")
        return DensityFit(rho_hat, 'exact', None, 0.0, sizes[0], sizes, deviations, [0.0] * len(sizes))

    usable = [(k, dev) for k, dev in zip(sizes, deviations) if dev > 1e-9]
    if len(usable) < min_sizes:
        raise RegressionError(f"only {len(usable)} sizes have nonzero deviation; need {min_sizes}")
    log_k = np.log([k for k, _ in usable])
    log_dev = np.log([dev for _, dev in usable])
    fit = scipy_stats.linregress(log_k, log_dev)
    delta_hat = dimension - float(fit.slope)
    residuals = (log_dev - (fit.intercept + fit.slope * log_k)).tolist()
    stderr = float(fit.stderr)
    t_stat = delta_hat / stderr if stderr > 0 else math.inf
    return DensityFit(rho_hat=rho_hat, delta_hat=delta_hat, stderr=stderr,
                      M_prime=float(math.exp(fit.intercept)) / rho_hat,
                      l_min=usable[0][0], sizes=sizes, deviations=deviations,
                      residuals=residuals, t_statistic=t_stat)


@dataclass
class LaczkovichResult:
    K_hat: float
    argmax: int
    ratios: List[float]
    alpha: float

    def to_dict(self) -> Dict[str, Any]:
        return {'K_hat': self.K_hat, 'argmax': self.argmax, 'alpha': self.alpha,
                'region_count': len(self.ratios)}


def laczkovich_ratio(points: DeloneSetWindow, alpha: float, regions: Sequence[GridRegion],
                     jobs: int = 1, progress: bool = False) -> LaczkovichResult:
    """
    K_hat = max over regions of |N(X, U) - alpha mu(U)| / mu(boundary U).
    """
    def ratio(region: GridRegion) -> float:
        if region.is_empty():
            raise RegionError("empty region in Laczkovich batch")
        boundary = region.boundary_measure()
        assert boundary > 0, "finite nonempty regions have a boundary"
        return abs(count_points(points, region) - alpha * region.measure()) / boundary

    ratios = parallel_map(ratio, list(regions), jobs, desc='regions', progress=progress)
    argmax = int(np.argmax(ratios)) if ratios else -1
    return LaczkovichResult(K_hat=max(ratios) if ratios else 0.0, argmax=argmax,
                            ratios=ratios, alpha=alpha)


# Repetitivity

def _patch_key(offsets: np.ndarray, snap_tol: float) -> bytes:
    snapped = np.round(offsets / snap_tol).astype(np.int64)
    order = np.lexsort(snapped.T[::-1])
    return snapped[order].tobytes()


def repetitivity_estimate(points: DeloneSetWindow, r_list: Sequence[float], grid_step: float = 0.5,
                          snap_tol: float = 1e-6, margin: Optional[float] = None) -> Dict[str, Any]:
    """
    Sampled repetitivity function M_X(r).

    For every patch class of radius r (points within r of a center, up to translation),
    M is the largest distance from a grid sample to the nearest center of that class.
    Samples lie in the window shrunk by r + margin; estimates exceeding margin are censored.
    """
    x0, y0, x1, y1 = points.window
    side = min(x1 - x0, y1 - y0)
    margin = side / 4.0 if margin is None else margin
    tree = points.tree
    results = []
    for r in r_list:
        lo = np.array([x0 + r, y0 + r], dtype=float)
        hi = np.array([x1 - r, y1 - r], dtype=float)
        p = points.points
        core = np.all((p >= lo) & (p <= hi), axis=1)
        centers = p[core]
        if len(centers) == 0 or np.any(hi - lo <= 2 * margin):
            results.append({'r': r, 'M': None, 'classes': 0, 'censored': True})
            continue

        classes: Dict[bytes, List[int]] = {}
        neighbours = tree.query_ball_point(centers, r + EDGE_TOL)
        for index, (center, nb) in enumerate(zip(centers, neighbours)):
            key = _patch_key(p[nb] - center, snap_tol)
            classes.setdefault(key, []).append(index)

        # Sample grid keeps the window origin's phase for every r.
        start = np.array([x0, y0]) + np.ceil((lo + margin - [x0, y0]) / grid_step - EDGE_TOL) * grid_step
        xs = np.arange(start[0], hi[0] - margin + EDGE_TOL, grid_step)
        ys = np.arange(start[1], hi[1] - margin + EDGE_TOL, grid_step)
        gx, gy = np.meshgrid(xs, ys)
        samples = np.column_stack([gx.ravel(), gy.ravel()])
        worst = 0.0
        for members in classes.values():
            dist, _ = cKDTree(centers[members]).query(samples, k=1)
            worst = max(worst, float(dist.max()))
        results.append({'r': r, 'M': worst, 'classes': len(classes), 'censored': worst > margin})
        logger.debug(f"Repetitivity r={r}: {len(classes)} patch classes, M={worst:.6g}")

    measured = [e['M'] / e['r'] for e in results if e['M'] is not None and e['r'] > 0]
    return {'estimates': results, 'L_hat': max(measured) if measured else None}


# Tiles

class TileRaster:
    """Cells of a delta-grid met by each tile of one patch level."""

    def __init__(self, patch: HierarchicalPatch, level: int, delta: float):
        self.patch = patch
        self.level = level
        self.delta = delta
        polygons = [shapely.Polygon(p) for p in patch.polygons(level)]
        self.tile_count = len(polygons)
        xmin, ymin, xmax, ymax = patch.bounding_box()
        self.gx0 = int(math.floor(xmin / delta)) - 1
        self.gy0 = int(math.floor(ymin / delta)) - 1
        gx1 = int(math.ceil(xmax / delta)) + 1
        gy1 = int(math.ceil(ymax / delta)) + 1
        self.ny = gy1 - self.gy0
        ix, iy = np.meshgrid(np.arange(self.gx0, gx1), np.arange(self.gy0, gy1), indexing='ij')
        ix, iy = ix.ravel(), iy.ravel()
        boxes = shapely.box(ix * delta, iy * delta, (ix + 1) * delta, (iy + 1) * delta)

        shrunk = shapely.buffer(np.array(polygons, dtype=object), -EDGE_TOL, join_style='mitre')
        grown = shapely.buffer(np.array(polygons, dtype=object), EDGE_TOL, join_style='mitre')
        met = shapely.STRtree(shrunk).query(boxes, predicate='intersects')
        touch = shapely.STRtree(grown).query(boxes, predicate='intersects')
        self.met_tile, self.met_key = met[1], self._key(ix[met[0]], iy[met[0]])
        self.touch_tile, self.touch_key = touch[1], self._key(ix[touch[0]], iy[touch[0]])
        self.met_count = np.bincount(self.met_tile, minlength=self.tile_count)
        logger.debug(f"Rasterized level {level} at delta={delta}: {len(self.met_tile)} tile-cell pairs")

    def _key(self, i: np.ndarray, j: np.ndarray) -> np.ndarray:
        return (np.asarray(i) - self.gx0) * self.ny + (np.asarray(j) - self.gy0)

    def region_keys(self, region: GridRegion) -> np.ndarray:
        if region.is_empty():
            return np.zeros(0, dtype=np.int64)
        return self._key(region.cells[:, 0], region.cells[:, 1])

    def masks(self, region: GridRegion) -> Tuple[np.ndarray, np.ndarray]:
        """(inside, boundary) boolean masks over the level's tiles."""
        keys = self.region_keys(region)
        met_in = np.isin(self.met_key, keys)
        outside = np.bincount(self.met_tile[~met_in], minlength=self.tile_count)
        inside = (self.met_count > 0) & (outside == 0)
        touch_in = np.bincount(self.touch_tile[np.isin(self.touch_key, keys)],
                               minlength=self.tile_count) > 0
        return inside, touch_in & ~inside

    def single_cell_tiles(self) -> np.ndarray:
        """Keys of cells that contain at least one whole tile."""
        lone = self.met_count[self.met_tile] == 1
        return np.unique(self.met_key[lone])


def tile_raster(patch: HierarchicalPatch, level: int, delta: float) -> TileRaster:
    key = ('raster', level, float(delta))
    if key not in patch.raster_cache:
        patch.raster_cache[key] = TileRaster(patch, level, delta)
    return patch.raster_cache[key]


def tile_masks(patch: HierarchicalPatch, level: int, region: GridRegion) -> Tuple[np.ndarray, np.ndarray]:
    """Inside/boundary masks of the level-l tiles for a region inside the patch window."""
    _require_in_window(region, patch.window())
    return tile_raster(patch, level, region.delta).masks(region)


def count_tiles(patch: HierarchicalPatch, level: int, region: GridRegion) -> Dict[str, int]:
    """
    N(T^l, U) and L(T^l, boundary U).

    inside: tiles contained in the closed region. boundary: tiles meeting the closed
    region that are not contained in it, so every such tile meets the boundary.
    """
    inside, boundary = tile_masks(patch, level, region)
    return {'inside': int(inside.sum()), 'boundary': int(boundary.sum())}


def _tile_tree(patch: HierarchicalPatch, level: int) -> Tuple[Any, np.ndarray]:
    key = ('tree', level)
    if key not in patch.raster_cache:
        polygons = np.array([shapely.Polygon(p) for p in patch.polygons(level)], dtype=object)
        patch.raster_cache[key] = (shapely.STRtree(polygons), polygons)
    return patch.raster_cache[key]


def tiles_meeting(patch: HierarchicalPatch, level: int, geometry: Any) -> np.ndarray:
    """Indices of level-l tiles whose closed support meets a shapely geometry."""
    tree, _ = _tile_tree(patch, level)
    hits = tree.query(shapely.buffer(geometry, EDGE_TOL), predicate='intersects')
    return np.unique(hits)


def barycenter_sandwich(points: DeloneSetWindow, patch: HierarchicalPatch,
                        region: GridRegion) -> Dict[str, Any]:
    """0 <= N(X_T, U) - N(T, U) <= L(T, boundary U) for the tile centroids X_T."""
    n_points = count_points(points, region)
    tiles = count_tiles(patch, 0, region)
    gap = n_points - tiles['inside']
    return {'points': n_points, 'inside': tiles['inside'], 'boundary': tiles['boundary'],
            'ok': 0 <= gap <= tiles['boundary']}


def boundary_count_bound(stats: GeometryStats, region: GridRegion) -> float:
    """K (sqrt(d-1) / (2R) + 1)^(d-1) delta^-(d-1) mu(boundary U)."""
    d = region.dimension
    factor = (math.sqrt(d - 1) / (2.0 * stats.R) + 1.0) ** (d - 1)
    return stats.K * factor * region.delta ** (-(d - 1)) * region.boundary_measure()


# Fits with delta

def fitting_delta(stats: GeometryStats) -> float:
    """Sufficient cell size 2R(K + 1) for the fits-with-delta bullets."""
    return 2.0 * stats.R * (stats.K + 1)


def check_fits(patch: HierarchicalPatch, stats: GeometryStats, regions: Sequence[GridRegion],
               level: int = 0) -> BoundReport:
    """
    Verify the fits-with-delta bullets directly on sampled regions.

    Per region: every delta-cell contains a tile; every boundary component meets more
    than K tiles; no tile meets two boundary components. Component distances are reported.
    """
    report = BoundReport('fits')
    for index, region in enumerate(regions):
        scope = f"region[{index}]"
        raster = tile_raster(patch, level, region.delta)
        full = set(raster.single_cell_tiles().tolist())
        keys = raster.region_keys(region).tolist()
        missing = sum(1 for k in keys if k not in full)
        report.add_check('cell_contains_tile', missing == 0, scope, {'cells_without_tile': missing})

        components = region.boundary_components()
        met_sets = []
        for facets in components:
            met_sets.append(set(tiles_meeting(patch, level, region.facet_geometry(facets)).tolist()))
        counts = [len(s) for s in met_sets]
        report.add_check('component_meets_more_than_K', all(c > stats.K for c in counts), scope,
                         {'L_per_component': counts, 'K': stats.K})

        shared = 0
        min_gap = math.inf
        for a in range(len(met_sets)):
            for b in range(a + 1, len(met_sets)):
                shared += len(met_sets[a] & met_sets[b])
                gap = region.facet_geometry(components[a]).distance(region.facet_geometry(components[b]))
                min_gap = min(min_gap, gap)
        report.add_check('components_share_no_tile', shared == 0, scope,
                         {'shared_tiles': shared,
                          'min_component_distance': None if math.isinf(min_gap) else min_gap,
                          'two_R': 2.0 * stats.R})
    return report


def hat_identity(patch: HierarchicalPatch, hat: HatComponent, level: int = 0) -> Dict[str, Any]:
    """
    Tile counts across a hat completion.

    Tiles inside V_hat are inside V, inside a hole, or straddle a hole boundary (S).
    Checks N(V_hat) = N(V) + sum N(V_j) + S with every straddling tile meeting some
    hole boundary, and N(V) + sum N(V_j) <= N(V_hat) <= N(V) + sum (N(V_j) + L(dV_j)).
    """
    filled_in, _ = tile_masks(patch, level, hat.filled)
    comp_in, _ = tile_masks(patch, level, hat.component)
    hole_in = np.zeros_like(filled_in)
    hole_boundary = np.zeros_like(filled_in)
    hole_inside_total = 0
    hole_boundary_total = 0
    for hole in hat.holes:
        inside, boundary = tile_masks(patch, level, hole)
        hole_in |= inside
        hole_boundary |= boundary
        hole_inside_total += int(inside.sum())
        hole_boundary_total += int(boundary.sum())

    straddle = filled_in & ~comp_in & ~hole_in
    n_hat, n_v = int(filled_in.sum()), int(comp_in.sum())
    lower = n_v + hole_inside_total
    upper = lower + hole_boundary_total
    return {
        'N_hat': n_hat,
        'N_component': n_v,
        'N_holes': hole_inside_total,
        'L_hole_boundaries': hole_boundary_total,
        'straddle': int(straddle.sum()),
        'identity': n_hat == lower + int(straddle.sum()) and bool(np.all(hole_boundary[straddle])),
        'sandwich': lower <= n_hat <= upper
    }
