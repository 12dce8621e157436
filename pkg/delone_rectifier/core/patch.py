"""
Hierarchical patch model for the Delone Rectifier.
Generates supertile hierarchies from a substitution rule, evaluates tile polygons and
extracts the induced Delone set and the tiling's geometric constants.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import shapely
from scipy.spatial import cKDTree

from .field import FieldCoord
from .geometry import diameter_sq_xy, inradius_lower_bound_xy, signed_area_form
from .rules import IsometrySpec, SubstitutionRule, validate_rule
from .utils import DepthLimitError, PreconditionError, RuleValidationError, snap

logger = logging.getLogger(__name__)

Window = Tuple[int, int, int, int]


@dataclass(frozen=True)
class TileInstance:
    """A level-l tile: placement applied to lambda^l times its prototile."""

    prototile_id: str
    placement: Optional[IsometrySpec]
    level: int
    address: Tuple[int, ...]
    parent: Optional[int] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'prototile': self.prototile_id,
            'level': self.level,
            'address': list(self.address),
            'parent': self.parent,
            'placement': self.placement.to_dict() if self.placement else None
        }


@dataclass(frozen=True)
class GeometryStats:
    """Inradius r, circumradius R and ball-meet constant K of a tiling level."""

    level: int
    r: float
    R: float
    K: int

    def to_dict(self) -> Dict[str, Any]:
        return {'level': self.level, 'r': self.r, 'R': self.R, 'K': self.K}


def substitute_once(rule: SubstitutionRule,
                    tiles: Sequence[TileInstance]) -> Tuple[List[TileInstance], List[Tuple[int, int]]]:
    """
    Replace every level-l tile by its level-(l-1) children.

    Args:
        rule: Substitution rule
        tiles: Tiles of one level l >= 1

    Returns:
        (children, ranges) where ranges[i] is the slice of children belonging to tiles[i]
    """
    children: List[TileInstance] = []
    ranges: List[Tuple[int, int]] = []
    for index, tile in enumerate(tiles):
        if tile.level < 1:
            raise PreconditionError("cannot substitute level-0 tiles")
        scale = rule.lam_power(tile.level - 1)
        start = len(children)
        for j, (child_id, iso) in enumerate(rule.children[tile.prototile_id]):
            placement = tile.placement.compose(iso.with_scaled_translation(scale))
            children.append(TileInstance(child_id, placement, tile.level - 1,
                                         tile.address + (j,), index))
        ranges.append((start, len(children)))
    return children, ranges


def tile_counts_by_level(rule: SubstitutionRule, seed: str, depth: int) -> List[np.ndarray]:
    """Prototile count vectors e_seed * C^(depth - l) for l = 0..depth."""
    counts = rule.child_count_matrix()
    vectors = [None] * (depth + 1)
    current = np.zeros(len(rule.prototiles), dtype=object)
    current[rule.index_of(seed)] = 1
    vectors[depth] = current
    for level in range(depth - 1, -1, -1):
        current = current.dot(counts.astype(object))
        vectors[level] = current
    return vectors


class HierarchicalPatch:
    """Finite patch of an admissible tiling with its full supertile ancestry."""

    def __init__(self, rule: Optional[SubstitutionRule], seed: str, depth: int,
                 snap_tol: float = 1e-9):
        """
        Initialize an empty patch.

        Args:
            rule: Rule the patch was generated from (None for ingested patches)
            seed: Seed prototile id
            depth: Number of substitution steps L
            snap_tol: Grid used to snap evaluated vertices
        """
        self.rule = rule
        self.seed = seed
        self.depth = depth
        self.snap_tol = snap_tol
        self.levels: List[List[TileInstance]] = [[] for _ in range(depth + 1)]
        self.child_ranges: List[List[Tuple[int, int]]] = [[] for _ in range(depth + 1)]
        self._polygons: Dict[int, List[np.ndarray]] = {}
        self._window: Optional[Window] = None
        self.raster_cache: Dict[Any, Any] = {}

    # Construction

    def set_level(self, level: int, tiles: List[TileInstance]) -> None:
        self.levels[level] = tiles
        self._polygons.pop(level, None)

    def set_polygons(self, level: int, polygons: List[np.ndarray]) -> None:
        """Attach pre-evaluated polygons (used for ingested patches)."""
        self._polygons[level] = [np.asarray(p, dtype=float) for p in polygons]

    # Queries

    def tiles(self, level: int) -> List[TileInstance]:
        return self.levels[level]

    def tile_count(self, level: int = 0) -> int:
        return len(self.levels[level])

    def children_of(self, level: int, index: int) -> range:
        """Indices at level-1 of the children of tile ``index`` at ``level``."""
        start, end = self.child_ranges[level][index]
        return range(start, end)

    def support(self, tile: TileInstance) -> Tuple[FieldCoord, ...]:
        """Exact support of a tile, counter-clockwise."""
        if self.rule is None or tile.placement is None:
            raise PreconditionError("exact supports need a generated patch")
        scale = self.rule.lam_power(tile.level)
        support = tuple(tile.placement.apply(scale * v)
                        for v in self.rule.prototile(tile.prototile_id).vertices)
        return tuple(reversed(support)) if tile.placement.reflect else support

    def polygons(self, level: int) -> List[np.ndarray]:
        """Float polygons of one level, counter-clockwise and snapped."""
        if level not in self._polygons:
            self._polygons[level] = self._evaluate_level(level)
        return self._polygons[level]

    def _evaluate_level(self, level: int) -> List[np.ndarray]:
        tiles = self.levels[level]
        out: List[Optional[np.ndarray]] = [None] * len(tiles)
        scale = self.rule.lam_float ** level
        by_proto: Dict[str, List[int]] = {}
        for i, tile in enumerate(tiles):
            by_proto.setdefault(tile.prototile_id, []).append(i)

        for prototile_id, indices in by_proto.items():
            xy = self.rule.prototile(prototile_id).xy
            base = (xy[:, 0] + 1j * xy[:, 1]) * scale
            rot = np.array([tiles[i].placement.rotation_index for i in indices], dtype=float)
            refl = np.array([tiles[i].placement.reflect for i in indices], dtype=bool)
            shift = np.array([tiles[i].placement.translation.to_complex() for i in indices])
            turn = np.exp(2j * np.pi * rot / self.rule.order)
            z = np.where(refl[:, None], np.conj(base)[None, :], base[None, :]) * turn[:, None]
            z = z + shift[:, None]
            for row, i in enumerate(indices):
                pts = z[row][::-1] if refl[row] else z[row]
                out[i] = snap(np.column_stack([pts.real, pts.imag]), self.snap_tol)
        return out

    def bounding_box(self) -> Tuple[float, float, float, float]:
        top = np.vstack(self.polygons(self.depth))
        return (float(top[:, 0].min()), float(top[:, 1].min()),
                float(top[:, 0].max()), float(top[:, 1].max()))

    def level_area_form(self, level: int) -> FieldCoord:
        """Exact sum of the area forms of all tiles of a level."""
        total = FieldCoord.zero(self.rule.conductor)
        for tile in self.levels[level]:
            total = total + signed_area_form(self.support(tile))
        return total

    def type_counts(self, level: int = 0) -> Dict[str, int]:
        counts = {pid: 0 for pid in (self.rule.prototile_ids if self.rule else [])}
        for tile in self.levels[level]:
            counts[tile.prototile_id] = counts.get(tile.prototile_id, 0) + 1
        return counts

    def window(self) -> Window:
        """Largest integer-aligned rectangle of unit cells covered by the seed supertile."""
        if self._window is None:
            union = shapely.union_all([shapely.Polygon(p) for p in self.polygons(self.depth)])
            self._window = inscribed_window(union)
            logger.debug(f"Inscribed counting window {self._window}")
        return self._window

    def to_dict(self) -> Dict[str, Any]:
        """Convert patch to a dictionary for serialization."""
        levels = []
        for level in range(self.depth + 1):
            polygons = self.polygons(level)
            entries = []
            for tile, polygon in zip(self.levels[level], polygons):
                entry = tile.to_dict()
                entry['vertices'] = polygon.tolist()
                entries.append(entry)
            levels.append(entries)
        return {
            'rule': self.rule.name if self.rule else None,
            'seed': self.seed,
            'depth': self.depth,
            'tile_count': self.tile_count(0),
            'window': list(self.window()),
            'levels': levels
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'HierarchicalPatch':
        """Rebuild a patch from its JSON export; only float vertices and parent links are kept."""
        depth = int(data['depth'])
        patch = cls(None, data.get('seed', ''), depth)
        for level, entries in enumerate(data['levels']):
            tiles = [TileInstance(e['prototile'], None, level, tuple(e.get('address', ())),
                                  e.get('parent')) for e in entries]
            patch.set_level(level, tiles)
            patch.set_polygons(level, [e['vertices'] for e in entries])
        for level in range(1, depth + 1):
            ranges = [[len(patch.levels[level - 1]), 0] for _ in patch.levels[level]]
            for i, tile in enumerate(patch.levels[level - 1]):
                if tile.parent is not None:
                    ranges[tile.parent][0] = min(ranges[tile.parent][0], i)
                    ranges[tile.parent][1] = max(ranges[tile.parent][1], i + 1)
            patch.child_ranges[level] = [tuple(r) for r in ranges]
        if data.get('window'):
            patch._window = tuple(int(v) for v in data['window'])
        return patch


def generate(rule: SubstitutionRule, seed: Optional[str] = None, depth: int = 0,
             max_tiles: int = 2_000_000, validate: bool = True,
             snap_tol: float = 1e-9) -> HierarchicalPatch:
    """
    Build the supertile hierarchy of lambda^depth * seed.

    Args:
        rule: Substitution rule
        seed: Seed prototile id (defaults to the first prototile)
        depth: Number of substitution steps L
        max_tiles: Cap on the total tile count over all levels
        validate: Validate the rule first
        snap_tol: Grid used to snap evaluated vertices

    Returns:
        HierarchicalPatch with levels 0..depth
    """
    if depth < 0:
        raise PreconditionError(f"depth must be non-negative, got {depth}")
    seed = seed or rule.prototile_ids[0]
    rule.prototile(seed)

    if validate:
        report = validate_rule(rule)
        if not report.valid:
            raise RuleValidationError(f"rule '{rule.name}' is not a valid substitution", report)

    total = sum(int(v.sum()) for v in tile_counts_by_level(rule, seed, depth))
    if total > max_tiles:
        raise DepthLimitError(
            f"depth {depth} of '{rule.name}' needs {total} tiles (cap {max_tiles})"
        )

    patch = HierarchicalPatch(rule, seed, depth, snap_tol)
    top = TileInstance(seed, IsometrySpec.identity(rule.order, rule.conductor), depth, ())
    patch.set_level(depth, [top])
    for level in range(depth, 0, -1):
        children, ranges = substitute_once(rule, patch.levels[level])
        patch.set_level(level - 1, children)
        patch.child_ranges[level] = ranges
        logger.debug(f"Level {level - 1}: {len(children)} tiles")

    logger.info(f"Generated '{rule.name}' patch: seed={seed}, depth={depth}, "
                f"{patch.tile_count(0)} level-0 tiles")
    return patch


def inscribed_window(region: Any, tol: float = 1e-9) -> Window:
    """
    Largest axis-aligned rectangle of integer unit cells covered by a planar region.

    Args:
        region: shapely geometry
        tol: Buffer applied before the cover test

    Returns:
        (x0, y0, x1, y1) integer corners, empty (0, 0, 0, 0) if no cell fits
    """
    xmin, ymin, xmax, ymax = region.bounds
    x0, y0 = math.floor(xmin + tol), math.floor(ymin + tol)
    x1, y1 = math.ceil(xmax - tol), math.ceil(ymax - tol)
    if x1 <= x0 or y1 <= y0:
        return (0, 0, 0, 0)
    gx, gy = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
    boxes = shapely.box(gx, gy, gx + 1, gy + 1)
    covered = shapely.covers(region.buffer(tol), boxes)

    best_area, best = 0, (0, 0, 0, 0)
    heights = np.zeros(covered.shape[1], dtype=int)
    for row in range(covered.shape[0]):
        heights = np.where(covered[row], heights + 1, 0)
        stack: List[int] = []
        for col in range(len(heights) + 1):
            h = heights[col] if col < len(heights) else 0
            while stack and heights[stack[-1]] >= h:
                top = stack.pop()
                height = int(heights[top])
                left = stack[-1] + 1 if stack else 0
                area = height * (col - left)
                if area > best_area:
                    best_area = area
                    best = (x0 + left, y0 + row - height + 1, x0 + col, y0 + row + 1)
            stack.append(col)
    return best


def _distinct_shapes(polygons: Sequence[np.ndarray], tol: float = 1e-6) -> List[np.ndarray]:
    """Polygons up to translation, one representative each."""
    shapes: Dict[bytes, np.ndarray] = {}
    for polygon in polygons:
        xy = np.asarray(polygon, dtype=float)
        key = np.round((xy - xy.min(axis=0)) / tol).astype(np.int64).tobytes()
        shapes.setdefault(key, xy)
    return list(shapes.values())


def geometry_stats(patch: Union['HierarchicalPatch', SubstitutionRule], level: int = 0) -> GeometryStats:
    """
    Inradius, circumradius and the ball-meet constant of the level-l tiling.

    r is a certified inradius lower bound (convex cuts), R is half the largest prototile
    diameter; both scale by lambda^l while K = floor(16 R^2 / r^2) does not. A patch
    without a rule (ingested) is measured on its own level-l tiles.
    """
    rule = patch if isinstance(patch, SubstitutionRule) else patch.rule
    if rule is not None:
        shapes = [p.xy for p in rule.prototiles]
        scale = rule.lam_float ** level
    else:
        if not 0 <= level <= patch.depth:
            raise PreconditionError(f"level {level} outside the patch levels 0..{patch.depth}")
        shapes = _distinct_shapes(patch.polygons(level))
        scale = 1.0
    r0 = min(inradius_lower_bound_xy(xy) for xy in shapes)
    diam_sq = max(diameter_sq_xy(xy) for xy in shapes)
    k_value = int(math.floor(16.0 * (diam_sq / 4.0) / (r0 * r0) + 1e-9))
    return GeometryStats(level=level, r=r0 * scale, R=math.sqrt(diam_sq) / 2.0 * scale, K=k_value)


class DeloneSetWindow:
    """Finite Delone point set together with the integer window it is counted in."""

    def __init__(self, points: np.ndarray, window: Window, r: Optional[float] = None,
                 R: Optional[float] = None, source: str = ''):
        """
        Initialize the point window.

        Args:
            points: (n, 2) array
            window: (x0, y0, x1, y1) integer counting window
            r: Declared packing radius, if known
            R: Declared covering radius, if known
            source: Where the points came from
        """
        self.points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.window = tuple(int(v) for v in window)
        self.r = r
        self.R = R
        self.source = source
        self._tree: Optional[cKDTree] = None

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    @property
    def window_size(self) -> Tuple[int, int]:
        x0, y0, x1, y1 = self.window
        return (x1 - x0, y1 - y0)

    def translated(self, offset: Sequence[float]) -> 'DeloneSetWindow':
        return DeloneSetWindow(self.points + np.asarray(offset, dtype=float), self.window,
                               self.r, self.R, self.source)

    def points_in_window(self) -> np.ndarray:
        x0, y0, x1, y1 = self.window
        p = self.points
        mask = (p[:, 0] >= x0) & (p[:, 0] < x1) & (p[:, 1] >= y0) & (p[:, 1] < y1)
        return p[mask]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'source': self.source,
            'count': int(len(self.points)),
            'window': list(self.window),
            'r': self.r,
            'R': self.R
        }


def delone_set(patch: HierarchicalPatch) -> DeloneSetWindow:
    """
    One point per level-0 tile, at the area centroid of its support.

    Generated patches use exact centroids; ingested patches (no rule) use their float polygons.

    Args:
        patch: Generated or ingested patch

    Returns:
        DeloneSetWindow over the patch's inscribed window with r, R from geometry_stats
    """
    rule = patch.rule
    if rule is None:
        centroids = shapely.centroid([shapely.Polygon(p) for p in patch.polygons(0)])
        points = shapely.get_coordinates(centroids).reshape(-1, 2)
        return DeloneSetWindow(snap(points, patch.snap_tol), patch.window(),
                               source=f"ingested:{patch.seed}:L{patch.depth}")
    points = np.empty((patch.tile_count(0), 2), dtype=float)
    for i, tile in enumerate(patch.tiles(0)):
        centroid = tile.placement.apply(rule.prototile(tile.prototile_id).centroid)
        points[i] = (centroid.real_float(), centroid.imag_float())
    stats = geometry_stats(rule, 0)
    return DeloneSetWindow(snap(points, patch.snap_tol), patch.window(), stats.r, stats.R,
                           source=f"{rule.name}:{patch.seed}:L{patch.depth}")


def lattice_points(window: Window, spacing: float = 1.0, offset: Sequence[float] = (0.0, 0.0),
                   margin: int = 0) -> DeloneSetWindow:
    """Points of spacing * Z^2 + offset covering a window enlarged by ``margin`` cells."""
    x0, y0, x1, y1 = window
    xs = np.arange(math.floor((x0 - margin - offset[0]) / spacing),
                   math.ceil((x1 + margin - offset[0]) / spacing) + 1) * spacing + offset[0]
    ys = np.arange(math.floor((y0 - margin - offset[1]) / spacing),
                   math.ceil((y1 + margin - offset[1]) / spacing) + 1) * spacing + offset[1]
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    return DeloneSetWindow(points, window, r=spacing / 2.0, R=spacing * math.sqrt(2) / 2.0,
                           source=f"lattice:{spacing}")


def delone_report(points: DeloneSetWindow, samples: int = 4096,
                  seed: Optional[int] = 0) -> Dict[str, Any]:
    """
    Measured packing and sampled covering radius of a point window.

    The packing radius is half the minimum pairwise distance; the covering radius is the
    largest nearest-point distance over uniform samples in the window.
    """
    if len(points.points) < 2:
        raise PreconditionError("need at least two points to measure a Delone set")
    dist, _ = points.tree.query(points.points, k=2)
    packing = float(dist[:, 1].min()) / 2.0
    x0, y0, x1, y1 = points.window
    rng = np.random.default_rng(seed)
    sites = np.column_stack([rng.uniform(x0, x1, samples), rng.uniform(y0, y1, samples)])
    covering = float(points.tree.query(sites, k=1)[0].max()) if x1 > x0 and y1 > y0 else 0.0
    report = {'packing_radius': packing, 'covering_radius_sampled': covering,
              'declared_r': points.r, 'declared_R': points.R}
    if points.R is not None:
        # Every point of a tile lies within its diameter 2R of the tile's centroid.
        report['covering_ok'] = covering <= 2.0 * points.R + 1e-9
    return report
