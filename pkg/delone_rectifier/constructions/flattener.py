"""
Dyadic density flattener.

Builds a bi-Lipschitz self-map of a cube of side 2^m, identity on its boundary, that moves
mass between dyadic sub-cubes level by level so that the pushforward volume of every unit
cube Q approaches the integral of u over Q divided by the mean of u.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.integral import box_sum, sliding_box_sums, summed_area_table
from ..core.utils import FlattenerError, PreconditionError, parallel_map

logger = logging.getLogger(__name__)

MIN_LIPSCHITZ_PAIRS = 10_000


class DensityField:
    """Positive density, constant on the unit cubes of a 2^m grid anchored at an integer origin."""

    def __init__(self, values: Any, origin: Optional[Sequence[int]] = None, cell: float = 1.0,
                 anchor: Optional[Sequence[float]] = None):
        """
        Initialize the density.

        Args:
            values: d-dimensional array with side 2^m along every axis, m >= 1
            origin: Integer lower corner of the cube (defaults to 0)
            cell: Side of one grid cube in world units
            anchor: World position of grid coordinate 0 (defaults to 0)
        """
        values = np.array(values, dtype=float)
        if values.ndim < 2:
            raise PreconditionError(f"density needs dimension >= 2, got {values.ndim}")
        side = values.shape[0]
        if any(s != side for s in values.shape) or side < 2 or side & (side - 1):
            raise PreconditionError(f"density grid {values.shape} is not a 2^m cube with m >= 1")
        if not np.all(np.isfinite(values)) or values.min() <= 0:
            raise PreconditionError("density values must be finite and positive")
        self.values = values
        self.dimension = values.ndim
        self.m = side.bit_length() - 1
        self.origin = np.zeros(self.dimension, dtype=np.int64) if origin is None \
            else np.asarray(origin, dtype=np.int64)
        self.table = summed_area_table(values, dtype=np.longdouble)
        self.cell = float(cell)
        self.anchor = np.zeros(self.dimension) if anchor is None else np.asarray(anchor, dtype=float)

    @property
    def side(self) -> int:
        return 2 ** self.m

    def total(self) -> np.longdouble:
        return self.table[(-1,) * self.dimension]

    @property
    def mean(self) -> float:
        return float(self.total() / self.side ** self.dimension)

    @property
    def bounds(self) -> Tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def integral(self, lower: Sequence, upper: Sequence) -> np.ndarray:
        """Integral of u over boxes given in grid coordinates relative to the origin."""
        return box_sum(self.table, lower, upper)

    def value_at(self, points: np.ndarray) -> np.ndarray:
        rel = np.floor(np.atleast_2d(points) - self.origin).astype(np.int64)
        rel = np.clip(rel, 0, self.side - 1)
        return self.values[tuple(rel.T)]

    def box_averages(self, size: int) -> np.ndarray:
        """Averages of u over every integer-aligned cube of the given side inside the grid."""
        return sliding_box_sums(self.table, size).astype(float) / size ** self.dimension

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.anchor) / self.cell

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return self.anchor + self.cell * np.asarray(points, dtype=float)

    def cube_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        lower = self.origin.astype(float)
        return lower, lower + self.side

    def to_dict(self) -> Dict[str, Any]:
        low, high = self.bounds
        return {
            'm': self.m,
            'dimension': self.dimension,
            'origin': self.origin.tolist(),
            'cell': self.cell,
            'anchor': self.anchor.tolist(),
            'mean': self.mean,
            'min': low,
            'max': high
        }


# Ratios

def _half_boxes(dimension: int, i: int, p: int, ks: Sequence[np.ndarray],
                eps: Sequence[np.ndarray]) -> Tuple[List, List, List]:
    span, half = 2 ** i, 2 ** (i - 1)
    lower, upper_a, upper_d = [], [], []
    for a in range(dimension):
        lo = ks[a] * span
        if a < p - 1:
            lower.append(lo)
            upper_a.append(lo + span)
            upper_d.append(lo + span)
        elif a == p - 1:
            lower.append(lo)
            upper_a.append(lo + half)
            upper_d.append(lo + span)
        else:
            lo = lo + eps[a - p] * half
            lower.append(lo)
            upper_a.append(lo + half)
            upper_d.append(lo + half)
    return lower, upper_a, upper_d


def level_ratios(density: DensityField, i: int, p: int) -> np.ndarray:
    """
    alpha for every cube k at level i and every eps, split along axis p.

    Returns:
        Array of shape (2^(m-i),)*d + (2,)*(d-p)
    """
    d = density.dimension
    n = 2 ** (density.m - i)
    grids = np.meshgrid(*([np.arange(n)] * d + [np.arange(2)] * (d - p)), indexing='ij')
    lower, upper_a, upper_d = _half_boxes(d, i, p, grids[:d], grids[d:])
    mass_a = density.integral(lower, upper_a)
    mass_d = density.integral(lower, upper_d)
    return np.asarray(mass_a / mass_d, dtype=float)


def alpha_ratios(density: DensityField, i: int, k: Sequence[int], p: int,
                 eps: Sequence[int] = ()) -> Dict[str, float]:
    """
    Mass fraction of the lower half (along axis p) of D^p(eps) inside cube k at level i.

    Args:
        density: Density field
        i: Level, 1 <= i <= m
        k: Cube index in [0, 2^(m-i))^d
        p: Split axis, 1-based
        eps: Half selectors for axes p+1..d

    Returns:
        {'alpha': ..., 'beta': 1 - alpha}
    """
    d = density.dimension
    if not 1 <= i <= density.m:
        raise PreconditionError(f"level {i} outside 1..{density.m}")
    if not 1 <= p <= d:
        raise PreconditionError(f"axis {p} outside 1..{d}")
    if len(k) != d or any(not 0 <= v < 2 ** (density.m - i) for v in k):
        raise PreconditionError(f"cube index {tuple(k)} outside level {i}")
    if len(eps) != d - p or any(e not in (0, 1) for e in eps):
        raise PreconditionError(f"eps {tuple(eps)} must have {d - p} entries in {{0, 1}}")
    ks = [np.asarray(v) for v in k]
    es = [np.asarray(e) for e in eps]
    lower, upper_a, upper_d = _half_boxes(d, i, p, ks, es)
    alpha = float(density.integral(lower, upper_a) / density.integral(lower, upper_d))
    return {'alpha': alpha, 'beta': 1.0 - alpha}


def e_values(density: DensityField, rho: Optional[float] = None) -> Dict[int, float]:
    """E(k) = sup over integer cubes of side k of max(rho / avg, avg / rho), for k = 2^0 .. 2^m."""
    rho = density.mean if rho is None else rho
    values = {}
    for j in range(density.m + 1):
        averages = density.box_averages(2 ** j)
        values[2 ** j] = float(max(np.max(rho / averages), np.max(averages / rho)))
    return values


@dataclass
class EtaStar:
    measured: float
    analytic: float
    ok: bool
    bracket_ok: bool
    bracket_failures: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {'measured': self.measured, 'analytic': self.analytic, 'ok': self.ok,
                'bracket_ok': self.bracket_ok, 'bracket_failures': self.bracket_failures}


def eta_star_bound(density: DensityField, rho: Optional[float] = None) -> EtaStar:
    """
    Smallest alpha or beta over every level, axis, cube and half, against (1/2) min_i E(2^(i-1))^-2.

    Also checks that every ratio at level i lies in [(1/2) E^-2, (1/2) E^2] with E = E(2^(i-1)).
    """
    e_vals = e_values(density, rho)
    measured = 1.0
    failures = []
    for i in range(1, density.m + 1):
        e = e_vals[2 ** (i - 1)]
        low, high = 0.5 / (e * e), 0.5 * e * e
        for p in range(1, density.dimension + 1):
            alphas = level_ratios(density, i, p)
            betas = 1.0 - alphas
            measured = min(measured, float(alphas.min()), float(betas.min()))
            worst_low = float(min(alphas.min(), betas.min()))
            worst_high = float(max(alphas.max(), betas.max()))
            if worst_low < low - 1e-12 or worst_high > high + 1e-12:
                failures.append({'level': i, 'axis': p, 'min': worst_low, 'max': worst_high,
                                 'lower': low, 'upper': high})
    analytic = min(0.5 / e_vals[2 ** (i - 1)] ** 2 for i in range(1, density.m + 1))
    return EtaStar(measured=measured, analytic=analytic, ok=measured >= analytic - 1e-12,
                   bracket_ok=not failures, bracket_failures=failures)


# Single step

def blend_mean(blend_width: float, dimension: int) -> float:
    """Mean of the lateral ramp tau over a (d-1)-face: (1 - (1 - 2w)^d) / (2 w d)."""
    w = blend_width
    return (1.0 - (1.0 - 2.0 * w) ** dimension) / (2.0 * w * dimension)


def interface_height(alpha: float, blend_width: float, dimension: int) -> float:
    """Core interface height h_c making the lower half's image carry exactly alpha of the volume."""
    return 0.5 + (alpha - 0.5) / blend_mean(blend_width, dimension)


def max_blend_width(alpha: float, dimension: int) -> float:
    """Largest w in (0, 1/2] whose interface height stays inside (0, 1)."""
    gap = abs(alpha - 0.5)
    if gap == 0.0 or gap < blend_mean(0.5, dimension) / 2.0:
        return 0.5
    low, high = 0.0, 0.5
    for _ in range(80):
        mid = (low + high) / 2.0
        if mid > 0 and gap < blend_mean(mid, dimension) / 2.0:
            low = mid
        else:
            high = mid
    return low


def _stretch(points: np.ndarray, axis: int, lower: np.ndarray, size: np.ndarray, h_c: np.ndarray,
             blend_width: float, inverse: bool = False) -> np.ndarray:
    """
    Blended two-piece fiber stretch along ``axis`` of each point's box [lower, lower + size].

    Lateral coordinates are unchanged; box faces are fixed exactly.
    """
    u = (points - lower) / size
    lateral = np.delete(u, axis, axis=1)
    dist = np.minimum(lateral, 1.0 - lateral).min(axis=1)
    tau = np.clip(dist / blend_width, 0.0, 1.0)
    h = 0.5 + tau * (h_c - 0.5)
    s = u[:, axis]
    if inverse:
        s_new = np.where(s <= h, s / (2.0 * h), 1.0 - (1.0 - s) / (2.0 * (1.0 - h)))
    else:
        s_new = np.where(s <= 0.5, 2.0 * h * s, 1.0 - 2.0 * (1.0 - s) * (1.0 - h))
    fixed = np.any((points == lower) | (points == lower + size), axis=1) | (h == 0.5)
    out = points.copy()
    out[:, axis] = np.where(fixed, points[:, axis], points[:, axis] + (s_new - s) * size[:, axis])
    return out


@dataclass(frozen=True)
class RYStepParams:
    """One mass-moving step on a box D split in half along ``axis`` (0-based)."""

    axis: int
    alpha: float
    beta: float
    blend_width: float
    origin: Tuple[float, ...]
    size: Tuple[float, ...]

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 or abs(self.alpha + self.beta - 1.0) > 1e-12:
            raise PreconditionError(f"alpha={self.alpha}, beta={self.beta} must be positive and sum to 1")
        if not 0.0 < self.blend_width <= 0.5:
            raise PreconditionError(f"blend width {self.blend_width} outside (0, 1/2]")
        h_c = self.h_c
        if not 0.0 < h_c < 1.0:
            raise FlattenerError(f"interface height {h_c} outside (0, 1)",
                                 diagnostics={'alpha': self.alpha,
                                              'max_blend_width': max_blend_width(self.alpha, self.dimension)})

    @property
    def dimension(self) -> int:
        return len(self.origin)

    @property
    def h_c(self) -> float:
        return interface_height(self.alpha, self.blend_width, self.dimension)

    def _apply(self, x: np.ndarray, inverse: bool) -> np.ndarray:
        points = np.atleast_2d(np.asarray(x, dtype=float))
        lower = np.asarray(self.origin, dtype=float)
        size = np.asarray(self.size, dtype=float)
        if np.any(points < lower) or np.any(points > lower + size):
            raise PreconditionError("point outside the step's box")
        n = len(points)
        out = _stretch(points, self.axis, np.broadcast_to(lower, points.shape),
                       np.broadcast_to(size, points.shape), np.full(n, self.h_c),
                       self.blend_width, inverse)
        return out[0] if np.ndim(x) == 1 else out


def ry_step(params: RYStepParams, x: np.ndarray) -> np.ndarray:
    """Apply one step; the lower half's image has volume 2 alpha times its own."""
    return params._apply(x, inverse=False)


def ry_step_inv(params: RYStepParams, x: np.ndarray) -> np.ndarray:
    return params._apply(x, inverse=True)


# Composed map

class FlatMap:
    """Composition of the per-level, per-axis steps over a DensityField's cube."""

    def __init__(self, density: DensityField, blend_width: float,
                 alphas: Dict[Tuple[int, int], np.ndarray], interfaces: Dict[Tuple[int, int], np.ndarray]):
        self.density = density
        self.blend_width = blend_width
        self.alphas = alphas
        self.interfaces = interfaces

    @property
    def dimension(self) -> int:
        return self.density.dimension

    @property
    def m(self) -> int:
        return self.density.m

    def stages(self, levels: Optional[Iterable[int]] = None) -> List[Tuple[int, int]]:
        levels = range(1, self.m + 1) if levels is None else sorted(levels)
        return [(i, p) for i in levels for p in range(1, self.dimension + 1)]

    def _frame(self, points: np.ndarray, i: int, p: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        span, half = 2 ** i, 2 ** (i - 1)
        origin = self.density.origin.astype(float)
        rel = points - origin
        n = 2 ** (self.m - i)
        k = np.clip(np.floor(rel / span), 0, n - 1).astype(np.int64)
        lower = k * float(span)
        size = np.full(points.shape, float(span))
        index = [k[:, a] for a in range(self.dimension)]
        for a in range(p, self.dimension):
            e = np.clip(np.floor((rel[:, a] - lower[:, a]) / half), 0, 1).astype(np.int64)
            lower[:, a] += e * half
            size[:, a] = half
            index.append(e)
        h_c = self.interfaces[(i, p)][tuple(index)]
        return origin + lower, size, h_c

    def _check_inside(self, points: np.ndarray, extend: bool) -> np.ndarray:
        lower, upper = self.density.cube_bounds()
        inside = np.all((points >= lower) & (points <= upper), axis=1)
        if not extend and not inside.all():
            raise PreconditionError(f"{int((~inside).sum())} points lie outside the cube")
        return inside

    def evaluate(self, points: np.ndarray, levels: Optional[Iterable[int]] = None,
                 extend: bool = False) -> np.ndarray:
        """Psi on an (n, d) array, stages applied level 1 first and axis 1 first within a level."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self._check_inside(points, extend)
        current = points[inside]
        for i, p in self.stages(levels):
            lower, size, h_c = self._frame(current, i, p)
            current = _stretch(current, p - 1, lower, size, h_c, self.blend_width)
        out = points.copy()
        out[inside] = current
        return out

    def invert(self, points: np.ndarray, levels: Optional[Iterable[int]] = None,
               extend: bool = False) -> np.ndarray:
        """Psi^-1 by fiberwise inversion of each stage in reverse order."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self._check_inside(points, extend)
        current = points[inside]
        for i, p in reversed(self.stages(levels)):
            lower, size, h_c = self._frame(current, i, p)
            current = _stretch(current, p - 1, lower, size, h_c, self.blend_width, inverse=True)
        out = points.copy()
        out[inside] = current
        return out

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.evaluate(points)

    def tol_vol(self) -> float:
        return 5.0 * self.dimension * self.m * self.blend_width

    def to_dict(self) -> Dict[str, Any]:
        return {'density': self.density.to_dict(), 'blend_width': self.blend_width,
                'stages': len(self.stages()), 'tol_vol': self.tol_vol()}


def build_flatmap(density: DensityField, blend_width: float = 0.125) -> FlatMap:
    """
    Precompute every ratio and interface height of the composed map.

    Raises:
        FlattenerError: some interface height leaves (0, 1); diagnostics carry the largest
            admissible blend width for the offending ratio
    """
    if not 0.0 < blend_width <= 0.5:
        raise PreconditionError(f"blend width {blend_width} outside (0, 1/2]")
    d = density.dimension
    alphas, interfaces = {}, {}
    for i in range(1, density.m + 1):
        for p in range(1, d + 1):
            ratios = level_ratios(density, i, p)
            heights = 0.5 + (ratios - 0.5) / blend_mean(blend_width, d)
            if np.any(heights <= 0.0) or np.any(heights >= 1.0):
                worst = float(ratios.flat[np.argmax(np.abs(ratios - 0.5))])
                raise FlattenerError(
                    f"blend width {blend_width} too wide for alpha={worst:.6g} at level {i}, axis {p}",
                    diagnostics={'level': i, 'axis': p, 'alpha': worst,
                                 'max_blend_width': max_blend_width(worst, d)})
            alphas[(i, p)] = ratios
            interfaces[(i, p)] = heights
    logger.info(f"Built flat map: m={density.m}, d={d}, {density.m * d} stages, w={blend_width}")
    return FlatMap(density, blend_width, alphas, interfaces)


class ExtendedFlatMap:
    """A FlatMap extended by the identity outside its cube."""

    def __init__(self, flatmap: FlatMap):
        self.flatmap = flatmap

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.flatmap.evaluate(points, extend=True)

    def inverse(self, points: np.ndarray) -> np.ndarray:
        return self.flatmap.invert(points, extend=True)


def extend_identity(flatmap: FlatMap) -> ExtendedFlatMap:
    return ExtendedFlatMap(flatmap)


# Volumes

def _cube_corners(density: DensityField, cube_level: int) -> np.ndarray:
    n = 2 ** (density.m - cube_level)
    grids = np.meshgrid(*[np.arange(n)] * density.dimension, indexing='ij')
    return np.stack([g.ravel() for g in grids], axis=1) * 2.0 ** cube_level + density.origin


def _boundary_volumes(flatmap: FlatMap, corners: np.ndarray, side: float, per_edge: int,
                      levels: Optional[Iterable[int]]) -> np.ndarray:
    t = np.arange(per_edge) / per_edge * side
    zeros, full = np.zeros(per_edge), np.full(per_edge, side)
    loop = np.concatenate([np.column_stack([t, zeros]), np.column_stack([full, t]),
                           np.column_stack([side - t, full]), np.column_stack([zeros, side - t])])
    rings = corners[:, None, :] + loop[None, :, :]
    images = flatmap.evaluate(rings.reshape(-1, 2), levels=levels).reshape(rings.shape)
    x, y = images[..., 0], images[..., 1]
    return 0.5 * np.abs(np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1))


def _binned_volumes(flatmap: FlatMap, samples: np.ndarray, weight: float, cube_level: int,
                    levels: Optional[Iterable[int]]) -> np.ndarray:
    density = flatmap.density
    n = 2 ** (density.m - cube_level)
    preimages = flatmap.invert(samples, levels=levels)
    index = np.clip(np.floor((preimages - density.origin) / 2 ** cube_level), 0, n - 1).astype(np.int64)
    flat = np.ravel_multi_index(tuple(index.T), (n,) * density.dimension)
    return np.bincount(flat, minlength=n ** density.dimension) * weight


def cube_volumes(flatmap: FlatMap, method: str = 'boundary', resolution: int = 64,
                 samples: int = 1_000_000, seed: Optional[int] = 0, cube_level: int = 0,
                 levels: Optional[Iterable[int]] = None, jobs: int = 1) -> np.ndarray:
    """
    Pushforward volume of every dyadic cube of side 2^cube_level.

    Args:
        flatmap: Composed map
        method: 'boundary' (shoelace over the image of each cube's boundary, d = 2),
            'grid' (midpoint grid pulled back and binned) or 'mc' (Monte-Carlo samples)
        resolution: Samples per unit length and axis for 'boundary' and 'grid'
        samples: Monte-Carlo sample count
        seed: Monte-Carlo seed; blocks use independent spawned streams
        cube_level: Side exponent of the cubes measured
        levels: Restrict the map to these levels
        jobs: Worker threads for Monte-Carlo blocks

    Returns:
        Array of shape (2^(m - cube_level),)*d
    """
    density = flatmap.density
    d = density.dimension
    n = 2 ** (density.m - cube_level)
    side = 2.0 ** cube_level
    corners = _cube_corners(density, cube_level)
    if method == 'boundary' and d != 2:
        logger.debug("Boundary volumes need d = 2; using the midpoint grid")
        method = 'grid'

    if method == 'boundary':
        volumes = _boundary_volumes(flatmap, corners, side, int(resolution * side), levels)
    elif method == 'grid':
        count = density.side * resolution
        axis = (np.arange(count) + 0.5) / resolution
        grids = np.meshgrid(*[axis] * d, indexing='ij')
        midpoints = np.stack([g.ravel() for g in grids], axis=1) + density.origin
        volumes = _binned_volumes(flatmap, midpoints, resolution ** -d, cube_level, levels)
    elif method == 'mc':
        blocks = max(1, min(64, samples // 100_000))
        streams = np.random.SeedSequence(seed).spawn(blocks)
        per_block = samples // blocks
        weight = density.side ** d / (per_block * blocks)
        lower, upper = density.cube_bounds()

        def run(stream):
            rng = np.random.default_rng(stream)
            return _binned_volumes(flatmap, rng.uniform(lower, upper, (per_block, d)), weight,
                                   cube_level, levels)

        volumes = np.sum(parallel_map(run, streams, jobs), axis=0)
    else:
        raise PreconditionError(f"unknown volume method '{method}'")
    return np.asarray(volumes, dtype=float).reshape((n,) * d)


def _cube_masses(density: DensityField, cube_level: int) -> np.ndarray:
    n = 2 ** (density.m - cube_level)
    side = 2 ** cube_level
    grids = np.meshgrid(*[np.arange(n)] * density.dimension, indexing='ij')
    lower = [g * side for g in grids]
    return np.asarray(density.integral(lower, [g + side for g in lower]), dtype=float)


def volume_check(flatmap: FlatMap, method: str = 'boundary', resolution: int = 64,
                 samples: int = 1_000_000, seed: Optional[int] = 0, jobs: int = 1) -> Dict[str, Any]:
    """vol(Psi(Q)) against (integral of u over Q) / mean(u) for every unit cube Q."""
    volumes = cube_volumes(flatmap, method, resolution, samples, seed, jobs=jobs)
    targets = flatmap.density.values / flatmap.density.mean
    errors = np.abs(volumes - targets)
    tol = flatmap.tol_vol()
    return {'method': method, 'volumes': volumes, 'targets': targets, 'errors': errors,
            'max_error': float(errors.max()), 'tol_vol': tol, 'ok': bool(errors.max() <= tol)}


def telescoping_check(flatmap: FlatMap, resolution: int = 64) -> Dict[str, Any]:
    """
    Per level i: the level-i stages alone push each level-(i-1) sub-cube to volume
    |C_i| times its share of the mass of its level-i parent.
    """
    density = flatmap.density
    d = density.dimension
    tol = flatmap.tol_vol()
    per_level = []
    for i in range(1, density.m + 1):
        volumes = cube_volumes(flatmap, 'boundary', resolution, cube_level=i - 1, levels=[i])
        masses = _cube_masses(density, i - 1)
        parents = _cube_masses(density, i)
        parent_of = np.repeat(parents, 2, axis=0)
        for axis in range(1, d):
            parent_of = np.repeat(parent_of, 2, axis=axis)
        targets = 2.0 ** (i * d) * masses / parent_of
        error = float(np.max(np.abs(volumes - targets))) / 2.0 ** ((i - 1) * d)
        per_level.append({'level': i, 'max_relative_error': error})
    worst = max(row['max_relative_error'] for row in per_level)
    return {'levels': per_level, 'max_relative_error': worst, 'tol_vol': tol, 'ok': worst <= tol}


# Derivatives

@dataclass
class JacobianEstimate:
    matrix: np.ndarray
    det: float
    core_det: float
    ideal_det: float
    target: float

    def to_dict(self) -> Dict[str, Any]:
        return {'matrix': self.matrix.tolist(), 'det': self.det, 'core_det': self.core_det,
                'ideal_det': self.ideal_det, 'target': self.target}


def jacobian_fd(flatmap: FlatMap, x: Sequence[float], h: float = 1e-6) -> JacobianEstimate:
    """
    Central-difference Jacobian of Psi at x.

    core_det is the product of the core slopes along x's path, ideal_det the same product
    with each interface height replaced by its ratio; ideal_det equals u(Q) / mean(u).

    Raises:
        FlattenerError: x is within h of a box face, a split interface or a blend collar
            at some stage ("non-smooth point")
    """
    point = np.asarray(x, dtype=float).reshape(1, -1)
    d = flatmap.dimension
    flatmap._check_inside(point, extend=False)
    core_det, ideal_det = 1.0, 1.0
    current = point
    for i, p in flatmap.stages():
        lower, size, h_c = flatmap._frame(current, i, p)
        u = ((current - lower) / size)[0]
        margin = h / size[0]
        hc = float(h_c[0])
        reason = None
        if np.any(u < margin) or np.any(u > 1.0 - margin):
            reason = 'box face'
        elif hc != 0.5:
            lateral = np.delete(u, p - 1)
            lateral_margin = np.delete(margin, p - 1)
            if np.any(np.minimum(lateral, 1.0 - lateral) < flatmap.blend_width + lateral_margin):
                reason = 'blend collar'
            elif abs(u[p - 1] - 0.5) < margin[p - 1]:
                reason = 'split interface'
        if reason:
            raise FlattenerError(f"non-smooth point {point[0].tolist()}: {reason} at level {i}, axis {p}",
                                 diagnostics={'level': i, 'axis': p, 'reason': reason})
        alpha = 0.5 + (hc - 0.5) * blend_mean(flatmap.blend_width, d)
        lower_half = u[p - 1] < 0.5
        core_det *= 2.0 * hc if lower_half else 2.0 * (1.0 - hc)
        ideal_det *= 2.0 * alpha if lower_half else 2.0 * (1.0 - alpha)
        current = _stretch(current, p - 1, lower, size, h_c, flatmap.blend_width)

    offsets = np.eye(d) * h
    forward = flatmap.evaluate(point + offsets)
    backward = flatmap.evaluate(point - offsets)
    matrix = ((forward - backward) / (2.0 * h)).T
    target = float(flatmap.density.value_at(point)[0]) / flatmap.density.mean
    return JacobianEstimate(matrix=matrix, det=float(np.linalg.det(matrix)), core_det=core_det,
                            ideal_det=ideal_det, target=target)


def _sample_pairs(rng: np.random.Generator, lower: np.ndarray, upper: np.ndarray,
                  count: int) -> Tuple[np.ndarray, np.ndarray]:
    d = len(lower)
    first = rng.uniform(lower, upper, (count, d))
    direction = rng.normal(size=(count, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    length = 10.0 ** rng.uniform(-3.0, -1.0, count)
    second = np.clip(first + direction * length[:, None], lower, upper)
    keep = np.any(first != second, axis=1)
    return first[keep], second[keep]


def _max_quotient(first: np.ndarray, second: np.ndarray, f_first: np.ndarray, f_second: np.ndarray) -> float:
    return float(np.max(np.linalg.norm(f_first - f_second, axis=1) / np.linalg.norm(first - second, axis=1)))


def calibrate_c_eta(blend_width: float, dimension: int, eta: float, points: int = 2000,
                    seed: Optional[int] = 0, h: float = 1e-7) -> float:
    """
    Largest sampled ||grad(Phi - Id)|| / |beta - alpha| of one step, forward or inverse,
    over alpha in [eta, 1 - eta] and every box aspect the composed map uses.
    """
    rng = np.random.default_rng(seed)
    eta = min(max(eta, 1e-6), 0.5)
    suite = [a for a in np.linspace(eta, 1.0 - eta, 9) if abs(a - 0.5) > 1e-9]
    worst = 0.0
    for p in range(1, dimension + 1):
        size = tuple(1.0 if a < p else 0.5 for a in range(dimension))
        for alpha in suite:
            if interface_height(alpha, blend_width, dimension) <= 0 or \
                    interface_height(alpha, blend_width, dimension) >= 1:
                continue
            params = RYStepParams(axis=p - 1, alpha=alpha, beta=1.0 - alpha, blend_width=blend_width,
                                  origin=(0.0,) * dimension, size=size)
            sample = rng.uniform(2 * h, 1.0 - 2 * h, (points, dimension)) * np.asarray(size)
            for apply in (ry_step, ry_step_inv):
                grads = np.empty((points, dimension, dimension))
                for j in range(dimension):
                    step = np.zeros(dimension)
                    step[j] = h
                    grads[:, :, j] = (apply(params, sample + step) - apply(params, sample - step)) / (2 * h)
                grads -= np.eye(dimension)
                norms = np.linalg.norm(grads, ord=2, axis=(1, 2))
                worst = max(worst, float(norms.max()) / abs(1.0 - 2.0 * alpha))
    return worst


def step_constant_products(density: DensityField, c_eta: float,
                           rho: Optional[float] = None) -> List[Dict[str, float]]:
    """Partial products of K_{i,d} = (1 + C (E(2^(i-1))^2 - E(2^(i-1))^-2) / 2)^d next to those of E(2^i)."""
    e_vals = e_values(density, rho)
    rows = []
    prod_k, prod_e = 1.0, 1.0
    for i in range(1, density.m + 1):
        e = e_vals[2 ** (i - 1)]
        k_value = (1.0 + 0.5 * c_eta * (e * e - 1.0 / (e * e))) ** density.dimension
        prod_k *= k_value
        prod_e *= e_vals[2 ** i]
        rows.append({'m': i, 'E_prev': e, 'K': k_value, 'prod_K': prod_k, 'prod_E': prod_e})
    return rows


@dataclass
class LipschitzEstimate:
    K_fwd: float
    K_inv: float
    K_id_bound: float
    c_eta: float
    pairs: int

    @property
    def within_bound(self) -> bool:
        return self.K_fwd <= self.K_id_bound * (1 + 1e-9) and self.K_inv <= self.K_id_bound * (1 + 1e-9)

    def to_dict(self) -> Dict[str, Any]:
        return {'K_fwd': self.K_fwd, 'K_inv': self.K_inv, 'K_id_bound': self.K_id_bound,
                'c_eta': self.c_eta, 'pairs': self.pairs, 'within_bound': self.within_bound}


def lipschitz_estimate(flatmap: FlatMap, samples: int = 10_000, seed: Optional[int] = 0,
                       c_eta: Optional[float] = None, rho: Optional[float] = None) -> LipschitzEstimate:
    """
    Sampled difference quotients of Psi and Psi^-1 over close pairs, with the product bound.

    Args:
        flatmap: Composed map
        samples: Number of pairs per direction (at least MIN_LIPSCHITZ_PAIRS)
        seed: Sampling seed
        c_eta: Step constant; calibrated from the measured eta* when omitted
        rho: Reference density for E (defaults to mean(u))
    """
    if samples < MIN_LIPSCHITZ_PAIRS:
        raise PreconditionError(f"need at least {MIN_LIPSCHITZ_PAIRS} sample pairs, got {samples}")
    density = flatmap.density
    lower, upper = density.cube_bounds()
    rng = np.random.default_rng(seed)
    first, second = _sample_pairs(rng, lower, upper, samples)
    k_fwd = _max_quotient(first, second, flatmap.evaluate(first), flatmap.evaluate(second))
    first, second = _sample_pairs(rng, lower, upper, samples)
    k_inv = _max_quotient(first, second, flatmap.invert(first), flatmap.invert(second))

    if c_eta is None:
        c_eta = calibrate_c_eta(flatmap.blend_width, flatmap.dimension,
                                eta_star_bound(density, rho).measured, seed=seed)
    rows = step_constant_products(density, c_eta, rho)
    bound = rows[-1]['prod_K'] if rows else 1.0
    return LipschitzEstimate(K_fwd=k_fwd, K_inv=k_inv, K_id_bound=bound, c_eta=c_eta, pairs=samples)


def boundary_identity_check(flatmap: FlatMap, per_face: int = 1000, seed: Optional[int] = 0) -> Dict[str, Any]:
    """Sampled points on every face of the cube must be fixed exactly."""
    density = flatmap.density
    d = density.dimension
    lower, upper = density.cube_bounds()
    rng = np.random.default_rng(seed)
    faces = []
    for axis, value in itertools.product(range(d), (0, 1)):
        pts = rng.uniform(lower, upper, (per_face, d))
        pts[:, axis] = upper[axis] if value else lower[axis]
        faces.append(pts)
    points = np.concatenate(faces)
    moved = int(np.sum(np.any(flatmap.evaluate(points) != points, axis=1)))
    return {'points': int(len(points)), 'moved': moved, 'ok': moved == 0}


def roundtrip_check(flatmap: FlatMap, count: int = 100_000, seed: Optional[int] = 0) -> Dict[str, Any]:
    """max |Psi^-1(Psi(x)) - x| over uniform samples."""
    lower, upper = flatmap.density.cube_bounds()
    rng = np.random.default_rng(seed)
    points = rng.uniform(lower, upper, (count, flatmap.dimension))
    error = float(np.max(np.abs(flatmap.invert(flatmap.evaluate(points)) - points)))
    return {'points': count, 'max_error': error, 'ok': error <= 1e-9}


def flatten_diagnostics(flatmap: FlatMap, method: str = 'boundary', resolution: int = 64,
                        samples: int = 1_000_000, lipschitz_pairs: int = 10_000,
                        roundtrip_points: int = 100_000, seed: Optional[int] = 0,
                        jobs: int = 1) -> Dict[str, Any]:
    """Every flattener check bundled into one diagnostics dictionary."""
    volumes = volume_check(flatmap, method, resolution, samples, seed, jobs)
    eta = eta_star_bound(flatmap.density)
    lipschitz = lipschitz_estimate(flatmap, lipschitz_pairs, seed)
    diagnostics = {
        'map': flatmap.to_dict(),
        'volumes': {key: volumes[key] for key in ('method', 'max_error', 'tol_vol', 'ok')},
        'volume_errors': volumes['errors'],
        'telescoping': telescoping_check(flatmap, resolution) if flatmap.dimension == 2 else None,
        'eta_star': eta.to_dict(),
        'lipschitz': lipschitz.to_dict(),
        'boundary_identity': boundary_identity_check(flatmap, seed=seed),
        'roundtrip': roundtrip_check(flatmap, roundtrip_points, seed),
        'step_products': step_constant_products(flatmap.density, lipschitz.c_eta)
    }
    checks = [diagnostics['volumes']['ok'], eta.ok, eta.bracket_ok,
              diagnostics['boundary_identity']['ok'], diagnostics['roundtrip']['ok']]
    if diagnostics['telescoping'] is not None:
        checks.append(diagnostics['telescoping']['ok'])
    diagnostics['ok'] = all(checks)
    return diagnostics
