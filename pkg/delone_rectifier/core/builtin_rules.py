"""
Built-in substitution rules.
Chair, table and Robinson-triangle rules, plus the ``block:<spec>`` colored-square family.
"""

import logging
import re
from typing import Callable, Dict, List, Sequence, Tuple

from .field import FieldCoord, golden_ratio
from .rules import IsometrySpec, Prototile, SubstitutionRule, find_isometry
from .utils import RuleParseError

logger = logging.getLogger(__name__)


def _points(pairs: Sequence[Tuple[int, int]]) -> Tuple[FieldCoord, ...]:
    return tuple(FieldCoord.point(x, y) for x, y in pairs)


def _gaussian_iso(rotation: int, x: int, y: int) -> IsometrySpec:
    return IsometrySpec(rotation, False, FieldCoord.point(x, y), 4)


def chair_rule() -> SubstitutionRule:
    """L-tromino chair rule: lambda = 2, four children (two corner copies rotated)."""
    chair = Prototile('L', _points([(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]))
    children = {
        'L': (
            ('L', _gaussian_iso(0, 0, 0)),
            ('L', _gaussian_iso(0, 1, 1)),
            ('L', _gaussian_iso(1, 4, 0)),
            ('L', _gaussian_iso(3, 0, 4)),
        )
    }
    return SubstitutionRule(name='chair', order=4, lam=FieldCoord.rational(4, 2),
                            prototiles=(chair,), children=children)


def table_rule() -> SubstitutionRule:
    """Domino table rule: two vertical end dominoes, two stacked horizontal middle dominoes."""
    domino = Prototile('D', _points([(0, 0), (2, 0), (2, 1), (0, 1)]))
    children = {
        'D': (
            ('D', _gaussian_iso(1, 1, 0)),
            ('D', _gaussian_iso(1, 4, 0)),
            ('D', _gaussian_iso(0, 1, 0)),
            ('D', _gaussian_iso(0, 1, 1)),
        )
    }
    return SubstitutionRule(name='table', order=4, lam=FieldCoord.rational(4, 2),
                            prototiles=(domino,), children=children)


def _children_from_triangles(prototiles: Dict[str, Prototile],
                             triangles: List[Tuple[str, Tuple[FieldCoord, ...]]],
                             order: int) -> Tuple[Tuple[str, IsometrySpec], ...]:
    entries = []
    for child_id, triangle in triangles:
        iso = find_isometry(prototiles[child_id].vertices, triangle, order)
        if iso is None:
            raise RuleParseError(f"subdivision triangle is not a copy of prototile '{child_id}'",
                                 field='children')
        entries.append((child_id, iso))
    return tuple(entries)


def penrose_triangles_rule() -> SubstitutionRule:
    """
    Robinson triangle decomposition of the Penrose tiling.

    The obtuse triangle (apex angle 108 degrees) splits into two obtuse and one acute
    triangle, the acute one (apex 36 degrees) into one acute and one obtuse.
    The obtuse prototile is listed first, so the matrix is [[2, 1], [1, 1]].
    """
    zero = FieldCoord.zero(10)
    one = FieldCoord.rational(10, 1)
    z = FieldCoord.zeta(10, 1)
    phi = golden_ratio()
    inv_phi = phi - 1

    obtuse = Prototile('obtuse', (zero, phi, z))
    acute = Prototile('acute', (zero, one, z))
    by_id = {'obtuse': obtuse, 'acute': acute}

    # Inflated obtuse: apex A, base B..C.
    apex, left, right = phi * z, zero, phi * phi
    q = left + (apex - left) * inv_phi
    r = left + (right - left) * inv_phi
    obtuse_parts = [
        ('obtuse', (r, right, apex)),
        ('obtuse', (q, r, left)),
        ('acute', (r, q, apex)),
    ]

    # Inflated acute: apex at the origin, legs of length phi.
    apex, left, right = zero, phi, phi * z
    p = apex + (left - apex) * inv_phi
    acute_parts = [
        ('acute', (right, p, left)),
        ('obtuse', (p, right, apex)),
    ]

    children = {
        'obtuse': _children_from_triangles(by_id, obtuse_parts, 10),
        'acute': _children_from_triangles(by_id, acute_parts, 10),
    }
    return SubstitutionRule(name='penrose-triangles', order=10, lam=phi,
                            prototiles=(obtuse, acute), children=children)


_COLOR_SPEC = re.compile(r'^\s*(\S)\s*=\s*([^;]+?)\s*$')


def block_rule(spec: str) -> SubstitutionRule:
    """
    Parse ``<color>=<row>.<row>...;<color>=...`` into a colored unit-square rule.

    Rows are listed top to bottom and N (the row length) is the dilation factor.

    Args:
        spec: Text after the ``block:`` prefix

    Returns:
        SubstitutionRule with one unit-square prototile per color
    """
    if not spec.strip():
        raise RuleParseError("empty block spec", field='block')

    matrices: Dict[str, List[str]] = {}
    for part in spec.split(';'):
        if not part.strip():
            continue
        match = _COLOR_SPEC.match(part)
        if not match:
            raise RuleParseError(f"malformed color entry '{part.strip()}' (expected c=row.row...)",
                                 field='block')
        color, body = match.group(1), match.group(2)
        if color in matrices:
            raise RuleParseError(f"color '{color}' declared twice", field='block')
        matrices[color] = [row.strip() for row in body.split('.')]

    size = None
    for color, rows in matrices.items():
        if size is None:
            size = len(rows[0])
        if size < 2:
            raise RuleParseError(f"color '{color}' needs rows of length at least 2", field='block')
        if len(rows) != size or any(len(row) != size for row in rows):
            raise RuleParseError(f"color '{color}' is not a {size}x{size} matrix", field='block')
        unknown = sorted({c for row in rows for c in row} - set(matrices))
        if unknown:
            raise RuleParseError(f"color '{color}' uses undeclared colors {unknown}", field='block')

    square = _points([(0, 0), (1, 0), (1, 1), (0, 1)])
    prototiles = tuple(Prototile(color, square, color=color) for color in matrices)
    children = {}
    for color, rows in matrices.items():
        entries = []
        for r, row in enumerate(rows):
            for c, child in enumerate(row):
                entries.append((child, IsometrySpec(0, False, FieldCoord.point(c, size - 1 - r), 1)))
        children[color] = tuple(entries)

    logger.debug(f"Parsed block rule with {len(prototiles)} colors, N={size}")
    return SubstitutionRule(name=f"block:{spec}", order=1, lam=FieldCoord.rational(4, size),
                            prototiles=prototiles, children=children)


BUILTIN_RULES: Dict[str, Callable[[], SubstitutionRule]] = {
    'chair': chair_rule,
    'table': table_rule,
    'penrose-triangles': penrose_triangles_rule,
}
