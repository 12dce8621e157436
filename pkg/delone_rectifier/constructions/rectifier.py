"""
Lattice rectification of Delone sets.

Cell densities from point windows, bounded-displacement matchings onto beta Z^d via
maximum bipartite matching with Hall deficiency certificates, and the flatten, rescale and
match pipeline with measured bi-Lipschitz constants.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from ..analyzers.counting import fit_deviation
from ..core.patch import DeloneSetWindow, delone_report
from ..core.utils import FlattenerError, MatchingError, PreconditionError, RegressionError, parallel_map
from .flattener import DensityField, FlatMap, build_flatmap, volume_check

logger = logging.getLogger(__name__)

PointInput = Union[DeloneSetWindow, np.ndarray]

RADIUS_EPS = 1e-12


def covering_radius(points: DeloneSetWindow, seed: Optional[int] = 0) -> float:
    """Declared covering radius, or the sampled one when none is declared."""
    if points.R is not None:
        return float(points.R)
    return float(delone_report(points, seed=seed)['covering_radius_sampled'])


def density_from_points(points: DeloneSetWindow, cell: Optional[float] = None,
                        m: Optional[int] = None) -> DensityField:
    """
    Points per unit area on a 2^m grid of cells of side c, anchored at the window's lower corner.

    Args:
        points: Point window
        cell: Cell side c (defaults to c0 = 2R' rounded up to an integer, R' the covering radius)
        m: Dyadic depth (defaults to the largest that fits the window)

    Returns:
        DensityField in cell coordinates, with cell and anchor set for world conversion

    Raises:
        PreconditionError: the window cannot hold a 2^m c cube, or some cell is empty
    """
    c0 = 2.0 * covering_radius(points)
    cell = float(math.ceil(c0 - 1e-9)) if cell is None else float(cell)
    if cell <= 0:
        raise PreconditionError(f"cell size must be positive, got {cell}")
    x0, y0, x1, y1 = points.window
    side = min(x1 - x0, y1 - y0)
    fits = int(math.floor(math.log2(side / cell) + 1e-12)) if side >= cell else 0
    m = fits if m is None else m
    if m < 1 or m > fits:
        raise PreconditionError(f"window side {side} cannot hold a 2^{m} x {cell} cube")

    n = 2 ** m
    anchor = np.array([x0, y0], dtype=float)
    grid = (points.points - anchor) / cell
    inside = np.all((grid >= 0) & (grid < n), axis=1)
    index = np.floor(grid[inside]).astype(np.int64)
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (index[:, 0], index[:, 1]), 1)
    empty = int(np.sum(counts == 0))
    if empty:
        raise PreconditionError(f"cell size {cell} too small: {empty} empty cells; min required c0 = {c0:.6g}")
    logger.debug(f"Density grid {n}x{n}, cell {cell}, {int(counts.sum())} points")
    return DensityField(counts / cell ** 2, cell=cell, anchor=anchor)


# Matching

@dataclass
class Matching:
    """Core matching of points to lattice points at radius D."""

    points: np.ndarray
    lattice: np.ndarray
    pairs: np.ndarray
    radius: float
    beta: float
    window: Tuple[float, float, float, float]
    point_core: np.ndarray
    lattice_core: np.ndarray
    unmatched_points: List[int] = field(default_factory=list)
    unmatched_lattice: List[int] = field(default_factory=list)
    deficiency: Dict[str, Any] = field(default_factory=dict)
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def perfect(self) -> bool:
        return (not self.unmatched_points and not self.unmatched_lattice
                and bool(self.point_core.any()) and bool(self.lattice_core.any()))

    @property
    def displacements(self) -> np.ndarray:
        if not len(self.pairs):
            return np.zeros(0)
        return np.linalg.norm(self.points[self.pairs[:, 0]] - self.lattice[self.pairs[:, 1]], axis=1)

    @property
    def max_displacement(self) -> float:
        shifts = self.displacements
        return float(shifts.max()) if len(shifts) else 0.0

    @property
    def mean_displacement(self) -> float:
        shifts = self.displacements
        return float(shifts.mean()) if len(shifts) else 0.0

    def bilipschitz(self, max_pairs: Optional[int] = 20000, seed: Optional[int] = 0) -> float:
        core = self.point_core[self.pairs[:, 0]]
        pairs = self.pairs[core]
        return measure_bilipschitz(self.points[pairs[:, 0]], self.lattice[pairs[:, 1]], max_pairs, seed)

    def rows(self) -> List[Dict[str, float]]:
        shifts = self.displacements
        return [{'x': float(self.points[i][0]), 'y': float(self.points[i][1]),
                 'z1': float(self.lattice[j][0]), 'z2': float(self.lattice[j][1]),
                 'displacement': float(shift)}
                for (i, j), shift in zip(self.pairs, shifts)]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'D': self.radius,
            'beta': self.beta,
            'window': list(self.window),
            'perfect': self.perfect,
            'pairs': int(len(self.pairs)),
            'core_points': int(self.point_core.sum()),
            'core_lattice': int(self.lattice_core.sum()),
            'unmatched_points': len(self.unmatched_points),
            'unmatched_lattice': len(self.unmatched_lattice),
            'max_displacement': self.max_displacement,
            'mean_displacement': self.mean_displacement,
            'deficiency': self.deficiency,
            'failures': self.failures
        }


def _as_points(points: PointInput, window: Optional[Sequence[float]]) -> Tuple[np.ndarray, Tuple[float, ...]]:
    if isinstance(points, DeloneSetWindow):
        window = points.window if window is None else window
        points = points.points
    if window is None:
        raise PreconditionError("a window is required for raw point arrays")
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x0, y0, x1, y1 = (float(v) for v in window)
    keep = (points[:, 0] >= x0) & (points[:, 0] <= x1) & (points[:, 1] >= y0) & (points[:, 1] <= y1)
    return points[keep], (x0, y0, x1, y1)


def lattice_in_window(beta: float, window: Sequence[float]) -> np.ndarray:
    """Points of beta Z^2 inside the closed window."""
    x0, y0, x1, y1 = window
    xs = np.arange(math.ceil(x0 / beta - 1e-12), math.floor(x1 / beta + 1e-12) + 1) * beta
    ys = np.arange(math.ceil(y0 / beta - 1e-12), math.floor(y1 / beta + 1e-12) + 1) * beta
    gx, gy = np.meshgrid(xs, ys, indexing='ij')
    return np.column_stack([gx.ravel(), gy.ravel()])


def _core_mask(points: np.ndarray, window: Sequence[float], radius: float) -> np.ndarray:
    x0, y0, x1, y1 = window
    return ((points[:, 0] >= x0 + radius) & (points[:, 0] <= x1 - radius)
            & (points[:, 1] >= y0 + radius) & (points[:, 1] <= y1 - radius))


def _adjacency(rows: np.ndarray, columns: cKDTree, n_columns: int, radius: float) -> csr_matrix:
    neighbours = columns.query_ball_point(rows, r=radius + RADIUS_EPS) if len(rows) else []
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(n) for n in neighbours])
    indices = np.fromiter((j for n in neighbours for j in sorted(n)), dtype=np.int64, count=int(indptr[-1]))
    return csr_matrix((np.ones(len(indices), dtype=np.int8), indices, indptr), shape=(len(rows), n_columns))


def _maximum_matching(graph: csr_matrix) -> np.ndarray:
    if graph.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.asarray(maximum_bipartite_matching(graph, perm_type='column'))


def hall_certificate(graph: csr_matrix, match: np.ndarray) -> Dict[str, Any]:
    """
    Rows reachable by alternating paths from unmatched rows, with their neighbourhood.

    For a maximum matching |S| - |N(S)| equals the number of unmatched rows.
    """
    owner = {int(col): row for row, col in enumerate(match) if col >= 0}
    start = [row for row, col in enumerate(match) if col < 0]
    rows, columns = set(start), set()
    queue = deque(start)
    while queue:
        row = queue.popleft()
        for col in graph.indices[graph.indptr[row]:graph.indptr[row + 1]]:
            col = int(col)
            if col in columns:
                continue
            columns.add(col)
            partner = owner.get(col)
            if partner is not None and partner not in rows:
                rows.add(partner)
                queue.append(partner)
    return {'set_size': len(rows), 'neighbourhood_size': len(columns),
            'deficiency': len(rows) - len(columns), 'members': sorted(rows)}


def _merge_matchings(first: Dict[int, int], second: Dict[int, int]) -> List[Tuple[int, int]]:
    """
    Combine a matching covering the point core (point -> lattice) with one covering the
    lattice core (lattice -> point) into one matching covering both.

    Components of their union are alternating paths or cycles; each keeps one side's edges.
    """
    first_rev = {l: x for x, l in first.items()}
    second_rev = {x: l for l, x in second.items()}

    def neighbours(node: Tuple[str, int]) -> List[Tuple[Tuple[str, int], int]]:
        side, i = node
        out = []
        if side == 'x':
            if i in first:
                out.append((('l', first[i]), 1))
            if i in second_rev:
                out.append((('l', second_rev[i]), 2))
        else:
            if i in first_rev:
                out.append((('x', first_rev[i]), 1))
            if i in second:
                out.append((('x', second[i]), 2))
        return out

    nodes = sorted({('x', x) for x in list(first) + list(second_rev)}
                   | {('l', l) for l in list(first_rev) + list(second)})
    seen = set()
    pairs = []
    for start in nodes:
        if start in seen:
            continue
        component, edges = [], set()
        queue = deque([start])
        seen.add(start)
        while queue:
            node = queue.popleft()
            component.append(node)
            for other, label in neighbours(node):
                x_node, l_node = (node, other) if node[0] == 'x' else (other, node)
                edges.add((x_node[1], l_node[1], label))
                if other not in seen:
                    seen.add(other)
                    queue.append(other)

        if len(edges) == len(component):
            keep = 1
        else:
            degree = {node: len(neighbours(node)) for node in component}
            ends = [node for node in component if degree[node] == 1]
            if len(edges) % 2:
                end = ends[0]
                keep = neighbours(end)[0][1]
            else:
                keep = 1 if ends[0][0] == 'x' else 2
        pairs.extend((x, l) for x, l, label in edges if label == keep)
    return sorted(pairs)


def match_at_radius(points: PointInput, beta: float, radius: float,
                    window: Optional[Sequence[float]] = None) -> Matching:
    """
    Try to match the window core of the points and of beta Z^2 within distance ``radius``.

    Both cores are the window shrunk by the radius. On failure the matching holds the
    partial point-core matching and Hall certificates for the failing side(s).
    """
    if beta <= 0:
        raise PreconditionError(f"beta must be positive, got {beta}")
    pts, window = _as_points(points, window)
    lattice = lattice_in_window(beta, window)
    point_core = _core_mask(pts, window, radius)
    lattice_core = _core_mask(lattice, window, radius)
    point_rows = np.flatnonzero(point_core)
    lattice_rows = np.flatnonzero(lattice_core)

    to_lattice = _adjacency(pts[point_rows], cKDTree(lattice), len(lattice), radius)
    to_points = _adjacency(lattice[lattice_rows], cKDTree(pts), len(pts), radius)
    first = _maximum_matching(to_lattice)
    second = _maximum_matching(to_points)
    unmatched_points = [int(point_rows[r]) for r in np.flatnonzero(first < 0)]
    unmatched_lattice = [int(lattice_rows[r]) for r in np.flatnonzero(second < 0)]

    deficiency: Dict[str, Any] = {'value': 0}
    if unmatched_points:
        cert = hall_certificate(to_lattice, first)
        cert['members'] = [int(point_rows[r]) for r in cert['members']]
        deficiency['points'] = cert
    if unmatched_lattice:
        cert = hall_certificate(to_points, second)
        cert['members'] = [int(lattice_rows[r]) for r in cert['members']]
        deficiency['lattice'] = cert
    deficiency['value'] = max(len(unmatched_points), len(unmatched_lattice))

    first_map = {int(point_rows[r]): int(c) for r, c in enumerate(first) if c >= 0}
    if unmatched_points or unmatched_lattice:
        pairs = sorted(first_map.items())
    else:
        second_map = {int(lattice_rows[r]): int(c) for r, c in enumerate(second) if c >= 0}
        pairs = _merge_matchings(first_map, second_map)
    return Matching(points=pts, lattice=lattice, pairs=np.array(pairs, dtype=np.int64).reshape(-1, 2),
                    radius=radius, beta=beta, window=window, point_core=point_core,
                    lattice_core=lattice_core, unmatched_points=unmatched_points,
                    unmatched_lattice=unmatched_lattice, deficiency=deficiency)


def bounded_displacement_match(points: PointInput, beta: float, window: Optional[Sequence[float]] = None,
                               D_init: Optional[float] = None, D_cap: Optional[float] = None,
                               resolution: float = 1e-3, window_fraction: float = 0.125) -> Matching:
    """
    Smallest radius D (to resolution * beta) with a perfect core matching onto beta Z^2.

    D doubles from D_init until the cores match, then bisects. Failed radii keep their
    Hall certificates in ``failures``.

    The radius never exceeds ``window_fraction`` of the window side: the unmatched buffer of
    width D holds on the order of side * D points, enough to absorb any density mismatch
    once D grows in proportion to the window.

    Args:
        points: Point window or raw (n, 2) array with ``window``
        beta: Lattice spacing
        window: Matching window (defaults to the point window)
        D_init: First radius tried (default beta / 2)
        D_cap: Largest radius tried (default 64 beta)
        resolution: Bisection resolution relative to beta
        window_fraction: Largest radius as a fraction of the shorter window side

    Raises:
        MatchingError: no perfect core matching with nonempty cores up to D_cap
    """
    if not 0.0 < window_fraction < 0.5:
        raise PreconditionError(f"window_fraction must lie in (0, 1/2), got {window_fraction}")
    points, window = _as_points(points, window)
    x0, y0, x1, y1 = window
    cap = 64.0 * beta if D_cap is None else float(D_cap)
    cap = min(cap, window_fraction * min(x1 - x0, y1 - y0))
    D = min(beta / 2.0 if D_init is None else float(D_init), cap)
    failures = []
    low = 0.0
    result = match_at_radius(points, beta, D, window)
    while not result.perfect:
        failures.append({'D': D, 'deficiency': result.deficiency['value']})
        cores_empty = not result.point_core.any() or not result.lattice_core.any()
        if D >= cap or cores_empty:
            raise MatchingError(f"no perfect core matching up to D={D:.6g} (beta={beta})",
                                matching=result, deficiency=result.deficiency)
        low = D
        D = min(2.0 * D, cap)
        result = match_at_radius(points, beta, D, window)
        logger.debug(f"Retrying at D={D:.6g}")

    high, best = D, result
    while high - low > resolution * beta:
        mid = (low + high) / 2.0
        attempt = match_at_radius(points, beta, mid, window)
        if attempt.perfect:
            high, best = mid, attempt
        else:
            failures.append({'D': mid, 'deficiency': attempt.deficiency['value']})
            low = mid
    best.failures = failures
    logger.info(f"Perfect core matching at D={high:.6g} (beta={beta:.6g}, {len(best.pairs)} pairs)")
    return best


def match_sweep(point_sets: Sequence[PointInput], beta: float, jobs: int = 1,
                progress: bool = False, **kwargs) -> List[Matching]:
    """bounded_displacement_match over several windows, one instance per thread."""
    return parallel_map(lambda pts: bounded_displacement_match(pts, beta, **kwargs), list(point_sets),
                        jobs, desc='windows', progress=progress)


# Bi-Lipschitz constants

def measure_bilipschitz(sources: np.ndarray, images: np.ndarray, max_pairs: Optional[int] = None,
                        seed: Optional[int] = 0) -> float:
    """
    Smallest K with |x - x'| / K <= |f(x) - f(x')| <= K |x - x'| over the sampled pairs.

    All pairs are used when there are at most ``max_pairs`` of them; coincident images give inf.
    """
    sources = np.asarray(sources, dtype=float)
    images = np.asarray(images, dtype=float)
    n = len(sources)
    if n < 2 or len(images) != n:
        raise PreconditionError("need at least two source/image pairs of equal length")
    if max_pairs is None or n * (n - 1) // 2 <= max_pairs:
        source_dist = pdist(sources)
        image_dist = pdist(images)
    else:
        rng = np.random.default_rng(seed)
        first = rng.integers(0, n, max_pairs)
        second = rng.integers(0, n, max_pairs)
        keep = first != second
        first, second = first[keep], second[keep]
        source_dist = np.linalg.norm(sources[first] - sources[second], axis=1)
        image_dist = np.linalg.norm(images[first] - images[second], axis=1)
    if np.any(source_dist == 0):
        raise PreconditionError("map is not injective: coincident source points")
    if np.any(image_dist == 0):
        return math.inf
    return float(max(np.max(image_dist / source_dist), np.max(source_dist / image_dist)))


# Pipeline

@dataclass
class RectifyResult:
    density: DensityField
    flatmap: FlatMap
    rho_hat: float
    scale: float
    matching: Matching
    sources: np.ndarray
    images: np.ndarray
    K_bilip: float
    volume: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rho_hat': self.rho_hat,
            'homothety': self.scale,
            'density': self.density.to_dict(),
            'flatmap': self.flatmap.to_dict(),
            'volume_max_error': None if self.volume is None else self.volume['max_error'],
            'matching': self.matching.to_dict(),
            'matched_points': int(len(self.sources)),
            'K_bilip': self.K_bilip,
            'displacement_bound': self.matching.radius
        }


def rectify(points: DeloneSetWindow, cell: Optional[float] = None, m: Optional[int] = None,
            blend_width: float = 0.125, rho_hat: Optional[float] = None, verify: bool = True,
            density_mismatch: float = 0.02, resolution: float = 1e-3, D_cap: Optional[float] = None,
            window_fraction: float = 0.25, bilip_pairs: Optional[int] = 20000,
            seed: Optional[int] = 0) -> RectifyResult:
    """
    Flatten the point density, rescale to unit density and match onto Z^2.

    Args:
        points: Point window
        cell: Density cell side (default 2R' rounded up)
        m: Dyadic depth of the flattened cube
        blend_width: Flattener blend width
        rho_hat: Global density (default from fit_deviation, else the window count)
        verify: Run the flattener's volume check and abort when it fails
        density_mismatch: Largest tolerated relative gap between rho_hat and the cube mean
        resolution: Matching bisection resolution
        D_cap: Largest matching radius
        window_fraction: Largest matching radius as a fraction of the rescaled cube side
        bilip_pairs: Pairs sampled for K_bilip
        seed: Sampling seed

    Returns:
        RectifyResult with x -> z(x) on the matched core

    Raises:
        FlattenerError: density mismatch or failed flattener diagnostics
        MatchingError: the pushed points do not match onto Z^2 below D_cap
    """
    density = density_from_points(points, cell, m)
    if rho_hat is None:
        try:
            rho_hat = fit_deviation(points).rho_hat
        except RegressionError as e:
            width, height = points.window_size
            rho_hat = len(points.points_in_window()) / float(width * height)
            logger.warning(f"Density fit unavailable ({e}); using window count density {rho_hat:.6g}")
    gap = abs(density.mean / rho_hat - 1.0)
    if gap > density_mismatch:
        raise FlattenerError(f"cube density {density.mean:.6g} differs from rho_hat {rho_hat:.6g} "
                             f"by {gap:.2%}", diagnostics={'rho_hat': rho_hat, 'cube_mean': density.mean,
                                                           'mismatch': gap})

    flatmap = build_flatmap(density, blend_width)
    volume = None
    if verify:
        volume = volume_check(flatmap)
        if not volume['ok']:
            raise FlattenerError(f"flattener volume error {volume['max_error']:.3g} exceeds {volume['tol_vol']:.3g}",
                                 diagnostics={key: volume[key] for key in ('max_error', 'tol_vol')})

    lower = density.anchor
    upper = density.to_world(np.full(2, float(density.side)))
    inside = np.all((points.points >= lower) & (points.points <= upper), axis=1)
    sources = points.points[inside]
    pushed = density.to_world(flatmap.evaluate(density.to_grid(sources)))
    scale = rho_hat ** 0.5
    side = scale * (upper[0] - lower[0])
    # Matching drops points outside the closed window; rounding must not push any out.
    scaled = np.clip(scale * (pushed - lower), 0.0, side)
    matching = bounded_displacement_match(scaled, 1.0, (0.0, 0.0, side, side), resolution=resolution,
                                          D_cap=D_cap, window_fraction=window_fraction)

    core = matching.pairs[matching.point_core[matching.pairs[:, 0]]]
    matched_sources = sources[core[:, 0]]
    images = matching.lattice[core[:, 1]]
    k_bilip = measure_bilipschitz(matched_sources, images, bilip_pairs, seed)
    logger.info(f"Rectified {len(core)} core points: D={matching.radius:.4g}, K_bilip={k_bilip:.4g}")
    return RectifyResult(density=density, flatmap=flatmap, rho_hat=rho_hat, scale=scale,
                         matching=matching, sources=matched_sources, images=images,
                         K_bilip=k_bilip, volume=volume)
