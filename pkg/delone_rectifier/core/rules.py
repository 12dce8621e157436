"""
Substitution rule model for the Delone Rectifier.
Defines prototiles, isometries and rules, parses rule files and validates decompositions.
"""

import logging
import os
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .field import (FieldCoord, conductor_for_order, format_field_element, imag_sign,
                    parse_field_element, real_sign)
from .geometry import (area_from_form, centroid_exact, interiors_disjoint, is_simple,
                       polygon_contains, signed_area_form, to_xy)
from .report import ValidationReport
from .utils import RuleParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IsometrySpec:
    """Element of translations x| cyclic/dihedral point group: x -> zeta^k (conj x if reflect) + t."""

    rotation_index: int
    reflect: bool
    translation: FieldCoord
    order: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'rotation_index', self.rotation_index % self.order)

    @classmethod
    def identity(cls, order: int, conductor: int) -> 'IsometrySpec':
        return cls(0, False, FieldCoord.zero(conductor), order)

    def linear(self, point: FieldCoord) -> FieldCoord:
        """Apply the point-group part only."""
        if self.reflect:
            point = point.conjugate()
        return point.rotate(self.rotation_index * (point.conductor // self.order))

    def apply(self, point: FieldCoord) -> FieldCoord:
        return self.linear(point) + self.translation

    def compose(self, other: 'IsometrySpec') -> 'IsometrySpec':
        """Return self o other."""
        sign = -1 if self.reflect else 1
        return IsometrySpec(
            rotation_index=self.rotation_index + sign * other.rotation_index,
            reflect=self.reflect != other.reflect,
            translation=self.linear(other.translation) + self.translation,
            order=self.order
        )

    def with_scaled_translation(self, factor: FieldCoord) -> 'IsometrySpec':
        """Same point-group part, translation multiplied by a real field element."""
        return IsometrySpec(self.rotation_index, self.reflect, self.translation * factor, self.order)

    def apply_xy(self, xy: np.ndarray) -> np.ndarray:
        """Floating evaluation on an (n, 2) array of points."""
        z = xy[:, 0] + 1j * xy[:, 1]
        if self.reflect:
            z = np.conj(z)
        z = z * np.exp(2j * np.pi * self.rotation_index / self.order) + self.translation.to_complex()
        return np.column_stack([z.real, z.imag])

    def to_dict(self) -> Dict[str, object]:
        return {
            'rot': self.rotation_index,
            'refl': int(self.reflect),
            't': format_field_element(self.translation),
            't_float': [self.translation.real_float(), self.translation.imag_float()]
        }


@dataclass(frozen=True)
class Prototile:
    """A polygonal prototile with exact vertices (simple, counter-clockwise)."""

    id: str
    vertices: Tuple[FieldCoord, ...]
    color: Optional[str] = None

    @cached_property
    def area_form(self) -> FieldCoord:
        return signed_area_form(self.vertices)

    @cached_property
    def area(self) -> float:
        return area_from_form(self.area_form)

    @cached_property
    def xy(self) -> np.ndarray:
        return to_xy(self.vertices)

    @cached_property
    def centroid(self) -> FieldCoord:
        return centroid_exact(self.vertices)

    @property
    def label(self) -> str:
        """Color if given, else the id; distinguishes tiles in type comparisons."""
        return self.color if self.color is not None else self.id


@dataclass(frozen=True, eq=False)
class SubstitutionRule:
    """Prototiles, dilation factor and the decomposition of every inflated prototile."""

    name: str
    order: int
    lam: FieldCoord
    prototiles: Tuple[Prototile, ...]
    children: Dict[str, Tuple[Tuple[str, IsometrySpec], ...]] = field(default_factory=dict)
    dimension: int = 2

    @property
    def conductor(self) -> int:
        return self.lam.conductor

    @cached_property
    def lam_float(self) -> float:
        return self.lam.real_float()

    @property
    def prototile_ids(self) -> List[str]:
        return [p.id for p in self.prototiles]

    @cached_property
    def _by_id(self) -> Dict[str, Prototile]:
        return {p.id: p for p in self.prototiles}

    def prototile(self, prototile_id: str) -> Prototile:
        try:
            return self._by_id[prototile_id]
        except KeyError:
            raise KeyError(f"rule '{self.name}' has no prototile '{prototile_id}'")

    def index_of(self, prototile_id: str) -> int:
        return self.prototile_ids.index(prototile_id)

    def lam_power(self, level: int) -> FieldCoord:
        cache = self.__dict__.setdefault('_lam_powers', {})
        if level not in cache:
            cache[level] = self.lam ** level
        return cache[level]

    def child_support(self, parent_id: str, index: int) -> Tuple[FieldCoord, ...]:
        """Exact support of child ``index`` of the inflated prototile, counter-clockwise."""
        child_id, iso = self.children[parent_id][index]
        support = tuple(iso.apply(v) for v in self.prototile(child_id).vertices)
        return tuple(reversed(support)) if iso.reflect else support

    def inflated_support(self, prototile_id: str) -> Tuple[FieldCoord, ...]:
        return tuple(self.lam * v for v in self.prototile(prototile_id).vertices)

    def child_count_matrix(self) -> np.ndarray:
        """Counts per prototile (not per type): entry (i, j) = copies of p_j in lambda p_i."""
        ids = self.prototile_ids
        counts = np.zeros((len(ids), len(ids)), dtype=np.int64)
        for i, pid in enumerate(ids):
            for child_id, _ in self.children.get(pid, ()):
                counts[i, ids.index(child_id)] += 1
        return counts


def iter_isometries(source: Sequence[FieldCoord], target: Sequence[FieldCoord],
                    order: int) -> Iterator[IsometrySpec]:
    """
    Yield every point-group isometry mapping one vertex set onto another.

    Order 1 is the trivial group (translations only); larger orders are dihedral.

    Args:
        source: Vertices to move
        target: Vertices to reach (compared as sets)
        order: Point-group order
    """
    if len(source) != len(target):
        return
    target_set = frozenset(target)
    conductor = source[0].conductor
    reflections = (False, True) if order > 1 else (False,)
    for reflect in reflections:
        for k in range(order):
            linear = IsometrySpec(k, reflect, FieldCoord.zero(conductor), order)
            moved = [linear.linear(v) for v in source]
            for anchor in target:
                translation = anchor - moved[0]
                if frozenset(v + translation for v in moved) == target_set:
                    yield IsometrySpec(k, reflect, translation, order)


def find_isometry(source: Sequence[FieldCoord], target: Sequence[FieldCoord],
                  order: int) -> Optional[IsometrySpec]:
    """First isometry from iter_isometries, or None."""
    return next(iter_isometries(source, target, order), None)


# Rule files

_BLOCK = re.compile(r'(prototile|children)\s+([^\s{]+)\s*\{(.*?)\}', re.S)
_TOKEN = re.compile(r'\([^)]*\)|\[[^\]]*\]|[^\s()\[\]]+')
_CHILD = re.compile(
    r'\(\s*([^\s,()]+)\s*,\s*rot\s*=\s*(-?\d+)\s*,\s*refl\s*=\s*([01])\s*,'
    r'\s*t\s*=\s*(\([^)]*\)|\[[^\]]*\]|[^\s()]+)\s*\)'
)


def _line_of(text: str, offset: int) -> int:
    return text.count('\n', 0, offset) + 1


def parse_rule_text(text: str, name: str = 'custom') -> SubstitutionRule:
    """
    Parse the rule-file format into a SubstitutionRule.

    Args:
        text: File contents
        name: Rule name to record

    Returns:
        Parsed rule (not yet validated)
    """
    clean = "\n".join(line.split('#', 1)[0] for line in text.splitlines())
    outside = _BLOCK.sub(lambda m: "\n" * m.group(0).count("\n"), clean)

    order = None
    lam_text, lam_line = None, None
    for lineno, line in enumerate(outside.splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        header = re.match(r'^field\s+(\S+)$', stripped)
        if header:
            try:
                order = int(header.group(1))
            except ValueError:
                raise RuleParseError(f"field order '{header.group(1)}' is not an integer",
                                     line=lineno, field='field')
            continue
        dilation = re.match(r'^lambda\s+(.+)$', stripped)
        if dilation:
            lam_text, lam_line = dilation.group(1), lineno
            continue
        raise RuleParseError(f"unexpected content '{stripped}'", line=lineno)

    if order is None:
        raise RuleParseError("missing 'field <n>' header", field='field')
    conductor = conductor_for_order(order)
    if lam_text is None:
        raise RuleParseError("missing 'lambda <element>' header", field='lambda')
    try:
        lam = parse_field_element(lam_text, conductor)
    except RuleParseError as e:
        raise RuleParseError(str(e), line=lam_line, field='lambda')

    prototiles: List[Prototile] = []
    proto_lines: Dict[str, int] = {}
    children: Dict[str, Tuple[Tuple[str, IsometrySpec], ...]] = {}
    pending_children = []

    for match in _BLOCK.finditer(clean):
        kind, block_id, body = match.group(1), match.group(2), match.group(3)
        lineno = _line_of(clean, match.start())
        if kind == 'prototile':
            if block_id in proto_lines:
                raise RuleParseError(f"duplicate prototile '{block_id}'", line=lineno, field='prototile')
            prototiles.append(_parse_prototile(block_id, body, conductor, lineno))
            proto_lines[block_id] = lineno
        else:
            pending_children.append((block_id, body, lineno))

    if not prototiles:
        raise RuleParseError("rule declares no prototiles", field='prototile')

    for block_id, body, lineno in pending_children:
        if block_id not in proto_lines:
            raise RuleParseError(f"children block for unknown prototile '{block_id}'",
                                 line=lineno, field='children')
        entries = []
        for child in _CHILD.finditer(body):
            child_id = child.group(1)
            if child_id not in proto_lines:
                raise RuleParseError(f"prototile '{block_id}' references unknown child '{child_id}'",
                                     line=lineno, field='children')
            try:
                translation = parse_field_element(child.group(4), conductor)
            except RuleParseError as e:
                raise RuleParseError(str(e), line=lineno, field='t')
            entries.append((child_id, IsometrySpec(int(child.group(2)), child.group(3) == '1',
                                                   translation, order)))
        residual = _CHILD.sub('', body).strip()
        if residual:
            raise RuleParseError(f"malformed child entry '{residual[:40]}' for prototile '{block_id}'",
                                 line=lineno, field='children')
        children[block_id] = tuple(entries)

    for prototile in prototiles:
        if not children.get(prototile.id):
            raise RuleParseError(f"child list missing for prototile '{prototile.id}'",
                                 line=proto_lines[prototile.id], field='children')

    return SubstitutionRule(name=name, order=order, lam=lam, prototiles=tuple(prototiles),
                            children=children)


def _parse_prototile(block_id: str, body: str, conductor: int, lineno: int) -> Prototile:
    vertices = None
    color = None
    for part in body.split(';'):
        part = part.strip()
        if not part:
            continue
        if ':' not in part:
            raise RuleParseError(f"expected 'key: value' in prototile '{block_id}'",
                                 line=lineno, field='prototile')
        key, value = (s.strip() for s in part.split(':', 1))
        if key == 'vertices':
            try:
                vertices = tuple(parse_field_element(tok, conductor) for tok in _TOKEN.findall(value))
            except RuleParseError as e:
                raise RuleParseError(f"prototile '{block_id}': {e}", line=lineno, field='vertices')
        elif key == 'color':
            color = value or None
        else:
            raise RuleParseError(f"unknown key '{key}' in prototile '{block_id}'",
                                 line=lineno, field=key)
    if not vertices or len(vertices) < 3:
        raise RuleParseError(f"prototile '{block_id}' needs at least 3 vertices",
                             line=lineno, field='vertices')
    return Prototile(id=block_id, vertices=vertices, color=color)


def format_rule(rule: SubstitutionRule) -> str:
    """Serialize a rule back to the rule-file format."""
    lines = [f"# {rule.name}", f"field {rule.order}", f"lambda {format_field_element(rule.lam)}", ""]
    for p in rule.prototiles:
        verts = " ".join(format_field_element(v) for v in p.vertices)
        color = f"; color: {p.color}" if p.color else ""
        lines.append(f"prototile {p.id} {{ vertices: {verts}{color} }}")
    for p in rule.prototiles:
        lines.append(f"children {p.id} {{")
        for child_id, iso in rule.children[p.id]:
            lines.append(f"  ({child_id}, rot={iso.rotation_index}, refl={int(iso.reflect)}, "
                         f"t={format_field_element(iso.translation)})")
        lines.append("}")
    return "\n".join(lines) + "\n"


def load_rule(source: str) -> SubstitutionRule:
    """
    Resolve a built-in rule name or parse a rule file.

    Args:
        source: "chair", "table", "penrose-triangles", "block:<spec>" or a file path

    Returns:
        Parsed SubstitutionRule
    """
    from .builtin_rules import BUILTIN_RULES, block_rule

    if source in BUILTIN_RULES:
        return BUILTIN_RULES[source]()
    if source.startswith('block:'):
        return block_rule(source[len('block:'):])
    if not os.path.exists(source):
        raise RuleParseError(f"'{source}' is neither a built-in rule nor an existing file")
    with open(source, 'r', encoding='utf-8') as f:
        text = f.read()
    rule = parse_rule_text(text, name=os.path.splitext(os.path.basename(source))[0])
    logger.info(f"Loaded rule '{rule.name}' with {len(rule.prototiles)} prototiles from {source}")
    return rule


def validate_rule(rule: SubstitutionRule) -> ValidationReport:
    """
    Check that every inflated prototile is tiled by its children.

    Args:
        rule: Rule to validate

    Returns:
        ValidationReport with area identity, interior-disjointness and containment per prototile
    """
    report = ValidationReport(rule.name)
    lam = rule.lam
    lam_real = (lam - lam.conjugate()).is_zero()
    report.add_check('dilation', lam_real and real_sign(lam - 1) > 0,
                     details={'lambda': rule.lam_float})
    lam_sq = lam * lam

    for prototile in rule.prototiles:
        scope = prototile.id
        simple = is_simple(prototile.vertices)
        positive = imag_sign(prototile.area_form) > 0
        report.add_check('polygon', simple and positive, scope,
                         {'simple': simple, 'positively_oriented': positive})

        parent = rule.inflated_support(prototile.id)
        supports = [rule.child_support(prototile.id, j) for j in range(len(rule.children[prototile.id]))]

        total = FieldCoord.zero(rule.conductor)
        for support in supports:
            total = total + signed_area_form(support)
        expected = lam_sq * prototile.area_form
        report.add_check('area_identity', total == expected, scope, {
            'child_area_sum': area_from_form(total),
            'expected': area_from_form(expected),
            'deficit': area_from_form(expected - total)
        })

        overlapping = []
        for a in range(len(supports)):
            for b in range(a + 1, len(supports)):
                if not interiors_disjoint(supports[a], supports[b]):
                    overlapping.append([a, b])
        report.add_check('interior_disjoint', not overlapping, scope, {'overlapping_pairs': overlapping})

        outside = [j for j, support in enumerate(supports) if not polygon_contains(parent, support)]
        report.add_check('containment', not outside, scope, {'children_outside': outside})

    if report.valid:
        logger.info(f"Rule '{rule.name}' is valid")
    else:
        logger.warning(f"Rule '{rule.name}' failed {len(report.violations)} validation checks")
    return report
