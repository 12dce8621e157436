import pytest

from delone_rectifier.core.builtin_rules import block_rule
from delone_rectifier.core.rules import load_rule, validate_rule
from delone_rectifier.core.utils import RuleParseError


@pytest.mark.parametrize('name', ['chair', 'table', 'penrose-triangles'])
def test_builtin_rules_are_valid(name):
    assert validate_rule(load_rule(name)).valid


def test_chair_shape(chair):
    assert chair.lam_float == 2.0
    assert chair.prototile('L').area == pytest.approx(3.0)
    assert chair.child_count_matrix().tolist() == [[4]]


def test_table_is_one_type_with_four_children(table):
    assert table.child_count_matrix().tolist() == [[4]]


def test_penrose_counts(penrose):
    assert penrose.prototile_ids == ['obtuse', 'acute']
    assert penrose.child_count_matrix().tolist() == [[2, 1], [1, 1]]
    assert penrose.lam_float == pytest.approx((1 + 5 ** 0.5) / 2)


def test_block_rule_counts(block3):
    assert block3.lam_float == 3.0
    assert block3.child_count_matrix().tolist() == [[5, 4], [4, 5]]
    assert validate_rule(block3).valid


def test_block_prefix_resolves():
    rule = load_rule('block:a=ab.ba;b=ba.ab')
    assert rule.child_count_matrix().tolist() == [[2, 2], [2, 2]]


@pytest.mark.parametrize('spec', ['badspec', '', 'a=ab.b;b=ba.ab', 'a=ab.bc;b=ba.ab', 'a=a'])
def test_malformed_block_specs(spec):
    with pytest.raises(RuleParseError):
        block_rule(spec)
