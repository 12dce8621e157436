"""
Polygon geometry for substitution rules.
Exact predicates on cyclotomic coordinates plus floating helpers (inradius, diameter).
"""

import logging
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from .field import FieldCoord, imag_sign, real_sign

logger = logging.getLogger(__name__)

Polygon = Sequence[FieldCoord]


# Exact predicates

def orientation(a: FieldCoord, b: FieldCoord, c: FieldCoord) -> int:
    """
    Orientation of the triangle (a, b, c).

    Returns:
        1 for counter-clockwise, -1 for clockwise, 0 for collinear
    """
    return imag_sign((b - a).conjugate() * (c - a))


def dot_sign(u: FieldCoord, v: FieldCoord) -> int:
    """Sign of the Euclidean dot product of u and v."""
    w = u.conjugate() * v
    return real_sign(w + w.conjugate())


def on_segment(p: FieldCoord, a: FieldCoord, b: FieldCoord) -> bool:
    """True iff p lies on the closed segment [a, b]."""
    if orientation(a, b, p) != 0:
        return False
    return dot_sign(p - a, b - a) >= 0 and dot_sign(p - b, a - b) >= 0


def signed_area_form(vertices: Polygon) -> FieldCoord:
    """
    Exact signed area form S = sum(conj(z_k) z_{k+1} - z_k conj(z_{k+1})).

    S equals 4i times the signed area, so area identities can be checked exactly.
    """
    n = len(vertices)
    total = FieldCoord.zero(vertices[0].conductor)
    for k in range(n):
        z, w = vertices[k], vertices[(k + 1) % n]
        term = z.conjugate() * w
        total = total + term - term.conjugate()
    return total


def area_from_form(form: FieldCoord) -> float:
    """Signed area from an exact area form."""
    return form.imag_float() / 4.0


def signed_area(vertices: Polygon) -> float:
    return area_from_form(signed_area_form(vertices))


def point_in_polygon(p: FieldCoord, vertices: Polygon) -> int:
    """
    Locate a point relative to a simple polygon.

    Returns:
        1 strictly inside, 0 on the boundary, -1 strictly outside
    """
    n = len(vertices)
    for k in range(n):
        if on_segment(p, vertices[k], vertices[(k + 1) % n]):
            return 0
    winding = 0
    for k in range(n):
        a, b = vertices[k], vertices[(k + 1) % n]
        a_below = imag_sign(p - a) >= 0
        b_below = imag_sign(p - b) >= 0
        if a_below and not b_below:
            if orientation(a, b, p) > 0:
                winding += 1
        elif not a_below and b_below:
            if orientation(a, b, p) < 0:
                winding -= 1
    return 1 if winding != 0 else -1


def segments_cross_properly(a: FieldCoord, b: FieldCoord, c: FieldCoord, d: FieldCoord) -> bool:
    """True iff the open segments (a, b) and (c, d) cross at a single interior point."""
    o1 = orientation(a, b, c)
    o2 = orientation(a, b, d)
    o3 = orientation(c, d, a)
    o4 = orientation(c, d, b)
    return o1 * o2 < 0 and o3 * o4 < 0


def _segments_touch(a: FieldCoord, b: FieldCoord, c: FieldCoord, d: FieldCoord) -> bool:
    if segments_cross_properly(a, b, c, d):
        return True
    return on_segment(c, a, b) or on_segment(d, a, b) or on_segment(a, c, d) or on_segment(b, c, d)


def is_simple(vertices: Polygon) -> bool:
    """True iff the closed polygon has no self-intersections."""
    n = len(vertices)
    if n < 3:
        return False
    if len(set(vertices)) != n:
        return False
    edges = [(vertices[k], vertices[(k + 1) % n]) for k in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            a, b = edges[i]
            c, d = edges[j]
            if j == i + 1 or (i == 0 and j == n - 1):
                # Adjacent edges share one endpoint; they must not fold back on each other.
                shared = b if j == i + 1 else a
                other_i = a if j == i + 1 else b
                other_j = d if j == i + 1 else c
                if orientation(other_i, shared, other_j) == 0 and \
                        dot_sign(other_i - shared, other_j - shared) > 0:
                    return False
                continue
            if _segments_touch(a, b, c, d):
                return False
    return True


def triangulate(vertices: Polygon) -> List[Tuple[FieldCoord, FieldCoord, FieldCoord]]:
    """
    Ear-clipping triangulation of a counter-clockwise simple polygon.

    Collinear vertices are tolerated; degenerate ears are skipped.
    """
    remaining = list(vertices)
    triangles = []
    guard = 0
    while len(remaining) > 3:
        n = len(remaining)
        clipped = False
        for k in range(n):
            prev, cur, nxt = remaining[k - 1], remaining[k], remaining[(k + 1) % n]
            if orientation(prev, cur, nxt) <= 0:
                continue
            blocked = False
            for q in remaining:
                if q in (prev, cur, nxt):
                    continue
                if orientation(prev, cur, q) >= 0 and orientation(cur, nxt, q) >= 0 and \
                        orientation(nxt, prev, q) >= 0:
                    blocked = True
                    break
            if blocked:
                continue
            triangles.append((prev, cur, nxt))
            del remaining[k]
            clipped = True
            break
        if not clipped:
            # Only collinear vertices left to remove.
            for k in range(n):
                if orientation(remaining[k - 1], remaining[k], remaining[(k + 1) % n]) == 0:
                    del remaining[k]
                    clipped = True
                    break
        guard += 1
        if not clipped or guard > 10 * len(vertices):
            break
    if len(remaining) == 3 and orientation(*remaining) != 0:
        triangles.append(tuple(remaining))
    return triangles


def _sample_points(vertices: Polygon) -> List[FieldCoord]:
    n = len(vertices)
    samples = list(vertices)
    samples.extend((vertices[k] + vertices[(k + 1) % n]) / 2 for k in range(n))
    samples.extend((a + b + c) / 3 for a, b, c in triangulate(vertices))
    return samples


def interiors_disjoint(first: Polygon, second: Polygon) -> bool:
    """
    True iff two simple polygons have disjoint interiors.

    Checks proper edge crossings, then strict containment of vertices, edge midpoints
    and triangulation centroids of each polygon in the other.
    """
    n, m = len(first), len(second)
    for i in range(n):
        a, b = first[i], first[(i + 1) % n]
        for j in range(m):
            if segments_cross_properly(a, b, second[j], second[(j + 1) % m]):
                return False
    for p in _sample_points(first):
        if point_in_polygon(p, second) > 0:
            return False
    for p in _sample_points(second):
        if point_in_polygon(p, first) > 0:
            return False
    return True


def polygon_contains(outer: Polygon, inner: Polygon) -> bool:
    """True iff the closed polygon inner lies inside the closed polygon outer."""
    n, m = len(outer), len(inner)
    for i in range(m):
        a, b = inner[i], inner[(i + 1) % m]
        for j in range(n):
            if segments_cross_properly(a, b, outer[j], outer[(j + 1) % n]):
                return False
    return all(point_in_polygon(p, outer) >= 0 for p in _sample_points(inner))


def centroid_exact(vertices: Polygon) -> FieldCoord:
    """Area centroid of a simple polygon, exact in the coordinate field."""
    origin = vertices[0]
    weighted = FieldCoord.zero(origin.conductor)
    total = FieldCoord.zero(origin.conductor)
    for k in range(1, len(vertices) - 1):
        tri = (origin, vertices[k], vertices[k + 1])
        form = signed_area_form(tri)
        weighted = weighted + form * ((tri[0] + tri[1] + tri[2]) / 3)
        total = total + form
    return weighted / total


# Floating helpers

def to_xy(vertices: Polygon) -> np.ndarray:
    """Evaluate exact vertices to an (n, 2) float array."""
    return np.array([[v.real_float(), v.imag_float()] for v in vertices], dtype=float)


def polygon_area_xy(xy: np.ndarray) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def diameter_sq_xy(xy: np.ndarray) -> float:
    """Squared diameter (max vertex-pair distance) of a polygon."""
    diff = xy[:, None, :] - xy[None, :, :]
    return float(np.max(np.sum(diff * diff, axis=-1)))


def _cross(u: np.ndarray, v: np.ndarray) -> float:
    return float(u[0] * v[1] - u[1] * v[0])


def convex_pieces_xy(xy: np.ndarray, eps: float = 1e-12) -> List[np.ndarray]:
    """
    Cut a counter-clockwise simple polygon into convex pieces.

    Each reflex vertex is resolved by extending its incoming edge into the polygon
    until it hits the boundary.
    """
    pieces = []
    stack = [np.asarray(xy, dtype=float)]
    while stack:
        poly = stack.pop()
        n = len(poly)
        reflex = None
        for k in range(n):
            if _cross(poly[k] - poly[k - 1], poly[(k + 1) % n] - poly[k]) < -eps:
                reflex = k
                break
        if reflex is None:
            pieces.append(poly)
            continue
        origin = poly[reflex]
        direction = origin - poly[reflex - 1]
        best_t, best_edge, best_point = np.inf, None, None
        for j in range(n):
            if j == reflex or (j + 1) % n == reflex:
                continue
            a, b = poly[j], poly[(j + 1) % n]
            edge = b - a
            denom = _cross(direction, edge)
            if abs(denom) < eps:
                continue
            diff = a - origin
            t = _cross(diff, edge) / denom
            s = _cross(diff, direction) / denom
            if t > eps and -eps <= s <= 1 + eps and t < best_t:
                best_t, best_edge, best_point = t, j, origin + t * direction
        if best_edge is None:
            logger.warning("Convex cut failed to find a hit; keeping non-convex piece")
            pieces.append(poly)
            continue
        j = best_edge
        first = [poly[(reflex + s) % n] for s in range((j - reflex) % n + 1)]
        first.append(best_point)
        second = [best_point]
        second.extend(poly[(j + 1 + s) % n] for s in range((reflex - j - 1) % n + 1))
        for part in (first, second):
            part = _dedupe(np.array(part))
            if len(part) >= 3 and abs(polygon_area_xy(part)) > eps:
                stack.append(part)
    return pieces


def _dedupe(xy: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    keep = [xy[0]]
    for p in xy[1:]:
        if np.max(np.abs(p - keep[-1])) > tol:
            keep.append(p)
    if len(keep) > 1 and np.max(np.abs(keep[0] - keep[-1])) <= tol:
        keep.pop()
    return np.array(keep)


def chebyshev_radius_xy(xy: np.ndarray) -> float:
    """Radius of the largest disc inside a convex counter-clockwise polygon."""
    rows, rhs = [], []
    n = len(xy)
    for k in range(n):
        a, b = xy[k], xy[(k + 1) % n]
        edge = b - a
        length = float(np.hypot(edge[0], edge[1]))
        if length < 1e-15:
            continue
        normal = np.array([-edge[1], edge[0]]) / length
        # normal . (x - a) >= r
        rows.append([-normal[0], -normal[1], 1.0])
        rhs.append(-float(normal @ a))
    result = linprog(c=[0.0, 0.0, -1.0], A_ub=np.array(rows), b_ub=np.array(rhs),
                     bounds=[(None, None), (None, None), (0, None)], method="highs")
    if not result.success:
        logger.warning(f"Chebyshev radius LP failed: {result.message}")
        return 0.0
    return float(result.x[2])


def inradius_lower_bound_xy(xy: np.ndarray) -> float:
    """
    Certified lower bound on the inradius of a simple polygon.

    Maximum Chebyshev radius over a convex decomposition; exact for convex polygons.
    """
    return max(chebyshev_radius_xy(piece) for piece in convex_pieces_xy(xy))
