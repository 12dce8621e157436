"""
Grid regions: finite unions of delta-cells with vertices in delta * Z^d.
Boundary facets, connectivity, holes, hat completion and random region generation.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import shapely
from scipy import ndimage

from ..core.utils import RegionError

logger = logging.getLogger(__name__)


class GridRegion:
    """Set of half-open cells delta * (c + [0, 1)^d) for integer vectors c."""

    def __init__(self, delta: float, cells: Iterable[Sequence[int]], dimension: int = 2):
        """
        Initialize a region.

        Args:
            delta: Cell size (> 0)
            cells: Integer cell coordinates
            dimension: Used when cells is empty
        """
        if delta <= 0:
            raise RegionError(f"cell size must be positive, got {delta}")
        array = np.asarray(list(cells) if not isinstance(cells, np.ndarray) else cells, dtype=np.int64)
        if array.size == 0:
            array = np.zeros((0, dimension), dtype=np.int64)
        else:
            array = array.reshape(len(array), -1)
        self.delta = float(delta)
        self.cells = np.unique(array, axis=0) if len(array) else array
        self.dimension = int(self.cells.shape[1]) if len(self.cells) else dimension
        self._cell_set = frozenset(map(tuple, self.cells.tolist()))
        self._facets: Optional[np.ndarray] = None
        self._components: Optional[List['GridRegion']] = None

    # Constructors

    @classmethod
    def box(cls, delta: float, lower: Sequence[int], upper: Sequence[int]) -> 'GridRegion':
        """All cells c with lower <= c < upper (cell-index units)."""
        axes = [np.arange(lo, hi) for lo, hi in zip(lower, upper)]
        grids = np.meshgrid(*axes, indexing='ij')
        cells = np.column_stack([g.ravel() for g in grids]) if grids[0].size else []
        return cls(delta, cells, dimension=len(lower))

    @classmethod
    def cube(cls, delta: float, origin: Sequence[float], size: float) -> 'GridRegion':
        """Axis-aligned cube [origin, origin + size) in world units, both multiples of delta."""
        lower = [int(round(o / delta)) for o in origin]
        count = int(round(size / delta))
        if not np.allclose(np.asarray(lower) * delta, origin) or abs(count * delta - size) > 1e-9:
            raise RegionError(f"cube {origin}+{size} is not aligned to the {delta}-grid")
        return cls.box(delta, lower, [lo + count for lo in lower])

    # Measures

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, cell: Sequence[int]) -> bool:
        return tuple(cell) in self._cell_set

    @property
    def cell_set(self) -> frozenset:
        return self._cell_set

    def is_empty(self) -> bool:
        return len(self.cells) == 0

    def measure(self) -> float:
        """mu_d(U) = |cells| * delta^d."""
        return len(self.cells) * self.delta ** self.dimension

    def boundary_facets(self) -> np.ndarray:
        """
        Boundary facets as rows (cell..., axis, side): the face of ``cell`` on ``axis``,
        at the upper side when side == 1, shared with a non-member cell.
        """
        if self._facets is None:
            rows = []
            for axis in range(self.dimension):
                for side, step in ((0, -1), (1, 1)):
                    shifted = self.cells.copy()
                    shifted[:, axis] += step
                    outside = np.array([tuple(c) not in self._cell_set for c in shifted.tolist()],
                                       dtype=bool)
                    if outside.any():
                        picked = self.cells[outside]
                        extra = np.tile([axis, side], (len(picked), 1))
                        rows.append(np.hstack([picked, extra]))
            width = self.dimension + 2
            self._facets = np.vstack(rows) if rows else np.zeros((0, width), dtype=np.int64)
        return self._facets

    def boundary_measure(self) -> float:
        """mu_{d-1}(boundary) = #facets * delta^(d-1)."""
        return len(self.boundary_facets()) * self.delta ** (self.dimension - 1)

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """World-coordinate lower and upper corners of the bounding box."""
        if self.is_empty():
            raise RegionError("empty region has no bounds")
        return self.cells.min(axis=0) * self.delta, (self.cells.max(axis=0) + 1) * self.delta

    def within(self, lower: Sequence[float], upper: Sequence[float], tol: float = 1e-9) -> bool:
        """True iff every cell lies in the box [lower, upper]."""
        lo, hi = self.bounds()
        return bool(np.all(lo >= np.asarray(lower) - tol) and np.all(hi <= np.asarray(upper) + tol))

    # Set operations

    def union(self, other: 'GridRegion') -> 'GridRegion':
        self._check_grid(other)
        return GridRegion(self.delta, np.vstack([self.cells, other.cells]), self.dimension)

    def difference(self, other: 'GridRegion') -> 'GridRegion':
        self._check_grid(other)
        keep = [c for c in self.cells.tolist() if tuple(c) not in other.cell_set]
        return GridRegion(self.delta, keep, self.dimension)

    def is_subset(self, other: 'GridRegion') -> bool:
        self._check_grid(other)
        return self._cell_set <= other.cell_set

    def _check_grid(self, other: 'GridRegion') -> None:
        if abs(self.delta - other.delta) > 1e-12 or self.dimension != other.dimension:
            raise RegionError("regions live on different grids")

    # Connectivity

    def raster(self, pad: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """Dense boolean mask over the bounding box (padded) and the index of mask[0, ...]."""
        if self.is_empty():
            return np.zeros((1,) * self.dimension, dtype=bool), np.zeros(self.dimension, dtype=np.int64)
        origin = self.cells.min(axis=0) - pad
        shape = self.cells.max(axis=0) - origin + 1 + pad
        mask = np.zeros(tuple(int(s) for s in shape), dtype=bool)
        mask[tuple((self.cells - origin).T)] = True
        return mask, origin

    def _from_mask(self, mask: np.ndarray, origin: np.ndarray) -> 'GridRegion':
        return GridRegion(self.delta, np.argwhere(mask) + origin, self.dimension)

    def connected_components(self) -> List['GridRegion']:
        """Face-adjacent connected components, ordered by their smallest cell."""
        if self._components is None:
            if self.is_empty():
                self._components = []
            else:
                mask, origin = self.raster()
                structure = ndimage.generate_binary_structure(self.dimension, 1)
                labels, count = ndimage.label(mask, structure=structure)
                self._components = [self._from_mask(labels == k, origin) for k in range(1, count + 1)]
        return self._components

    def is_connected(self) -> bool:
        return len(self.connected_components()) == 1

    def holes(self) -> List['GridRegion']:
        """Bounded face-connected components of the complement."""
        if self.is_empty():
            return []
        mask, origin = self.raster(pad=1)
        structure = ndimage.generate_binary_structure(self.dimension, 1)
        labels, count = ndimage.label(~mask, structure=structure)
        border = set()
        for axis in range(self.dimension):
            for end in (0, mask.shape[axis] - 1):
                border.update(np.unique(np.take(labels, end, axis=axis)).tolist())
        return [self._from_mask(labels == k, origin) for k in range(1, count + 1) if k not in border]

    def _facet_vertices(self, facet: np.ndarray) -> List[Tuple[int, ...]]:
        cell, axis, side = facet[:self.dimension], int(facet[self.dimension]), int(facet[-1])
        base = cell.copy()
        base[axis] += side
        others = [a for a in range(self.dimension) if a != axis]
        corners = []
        for mask in range(1 << len(others)):
            corner = base.copy()
            for bit, a in enumerate(others):
                if mask >> bit & 1:
                    corner[a] += 1
            corners.append(tuple(int(v) for v in corner))
        return corners

    def boundary_components(self) -> List[np.ndarray]:
        """Boundary facets grouped into connected pieces (facets sharing a vertex)."""
        facets = self.boundary_facets()
        parent = list(range(len(facets)))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        first_at: Dict[Tuple[int, ...], int] = {}
        for index, facet in enumerate(facets):
            for vertex in self._facet_vertices(facet):
                if vertex in first_at:
                    a, b = find(index), find(first_at[vertex])
                    if a != b:
                        parent[a] = b
                else:
                    first_at[vertex] = index

        groups: Dict[int, List[int]] = {}
        for index in range(len(facets)):
            groups.setdefault(find(index), []).append(index)
        return [facets[idx] for idx in sorted(groups.values(), key=lambda g: g[0])]

    def has_connected_boundary(self) -> bool:
        return len(self.boundary_components()) <= 1

    # Planar geometry

    def geometry(self) -> Any:
        """Union of the closed cells as a shapely geometry (d = 2)."""
        self._require_planar()
        d = self.delta
        boxes = shapely.box(self.cells[:, 0] * d, self.cells[:, 1] * d,
                            (self.cells[:, 0] + 1) * d, (self.cells[:, 1] + 1) * d)
        return shapely.union_all(boxes)

    def facet_segments(self, facets: Optional[np.ndarray] = None) -> np.ndarray:
        """Facets as (m, 2, 2) world-coordinate segments (d = 2)."""
        self._require_planar()
        facets = self.boundary_facets() if facets is None else facets
        segments = np.zeros((len(facets), 2, 2))
        for k, facet in enumerate(facets):
            corners = self._facet_vertices(facet)
            segments[k] = np.asarray(corners, dtype=float) * self.delta
        return segments

    def facet_geometry(self, facets: Optional[np.ndarray] = None) -> Any:
        """Boundary facets (or one boundary component) as a shapely MultiLineString."""
        return shapely.MultiLineString(list(self.facet_segments(facets)))

    def _require_planar(self) -> None:
        if self.dimension != 2:
            raise RegionError("planar geometry is only available for d = 2")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'delta': self.delta,
            'cells': len(self.cells),
            'measure': self.measure(),
            'boundary_measure': self.boundary_measure()
        }

    def __repr__(self) -> str:
        return f"GridRegion(delta={self.delta}, cells={len(self.cells)})"


@dataclass
class HatComponent:
    """A connected component V, its hole-filled completion V_hat and the holes V_j."""

    component: GridRegion
    filled: GridRegion
    holes: List[GridRegion]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cells': len(self.component),
            'filled_cells': len(self.filled),
            'holes': [len(h) for h in self.holes],
            'filled_boundary_components': len(self.filled.boundary_components())
        }


def hat_completion(region: GridRegion) -> List[HatComponent]:
    """
    Split a region into components and fill each component's holes.

    Each filled component has a connected boundary and
    mu(V_hat) = mu(V) + sum_j mu(V_j).
    """
    out = []
    for component in region.connected_components():
        holes = component.holes()
        filled = component
        for hole in holes:
            filled = filled.union(hole)
        out.append(HatComponent(component=component, filled=filled, holes=holes))
    logger.debug(f"Hat completion: {len(out)} components, "
                 f"{sum(len(c.holes) for c in out)} holes")
    return out


def random_connected_region(delta: float, n_cells: int, lower: Sequence[int], upper: Sequence[int],
                            rng: np.random.Generator) -> GridRegion:
    """
    Seeded accretion of face-adjacent cells inside the cell-index box [lower, upper).

    Args:
        delta: Cell size
        n_cells: Target cell count (capped by the box size)
        lower: Inclusive lower cell index
        upper: Exclusive upper cell index
        rng: Random generator

    Returns:
        Connected GridRegion
    """
    lower = np.asarray(lower, dtype=np.int64)
    upper = np.asarray(upper, dtype=np.int64)
    if np.any(upper <= lower):
        raise RegionError(f"empty cell box {lower.tolist()}..{upper.tolist()}")
    capacity = int(np.prod(upper - lower))
    n_cells = min(n_cells, capacity)
    dimension = len(lower)

    start = tuple(int(v) for v in rng.integers(lower, upper))
    cells = {start}
    order = [start]
    frontier: List[Tuple[int, ...]] = []

    def push_neighbours(cell: Tuple[int, ...]) -> None:
        for axis in range(dimension):
            for step in (-1, 1):
                nb = list(cell)
                nb[axis] += step
                nb = tuple(nb)
                if nb not in cells and all(lower[a] <= nb[a] < upper[a] for a in range(dimension)):
                    frontier.append(nb)

    push_neighbours(start)
    while len(cells) < n_cells and frontier:
        pick = int(rng.integers(len(frontier)))
        frontier[pick], frontier[-1] = frontier[-1], frontier[pick]
        cell = frontier.pop()
        if cell in cells:
            continue
        cells.add(cell)
        order.append(cell)
        push_neighbours(cell)
    return GridRegion(delta, order, dimension)


def region_grid_limits(window: Sequence[int], delta: float, margin: float = 0.0) -> Tuple[List[int], List[int]]:
    """Cell-index box of delta-cells lying inside a window shrunk by margin."""
    x0, y0, x1, y1 = window
    lower = [int(np.ceil((x0 + margin) / delta - 1e-9)), int(np.ceil((y0 + margin) / delta - 1e-9))]
    upper = [int(np.floor((x1 - margin) / delta + 1e-9)), int(np.floor((y1 - margin) / delta + 1e-9))]
    return lower, upper


def random_regions(window: Sequence[int], delta: float, count: int, n_cells: int,
                   seed: Optional[int] = 0, margin: float = 0.0) -> List[GridRegion]:
    """Independent random connected regions inside a counting window."""
    lower, upper = region_grid_limits(window, delta, margin)
    rng = np.random.default_rng(seed)
    return [random_connected_region(delta, n_cells, lower, upper, rng) for _ in range(count)]
