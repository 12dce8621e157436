from fractions import Fraction

import pytest

from delone_rectifier.core.field import (FieldCoord, conductor_for_order, format_field_element,
                                         golden_ratio, imag_sign, parse_field_element, real_sign)
from delone_rectifier.core.utils import RuleParseError, UnsupportedFieldError


def test_conductor_for_supported_orders():
    assert conductor_for_order(1) == 4
    assert conductor_for_order(4) == 4
    assert conductor_for_order(5) == 10
    assert conductor_for_order(10) == 10
    assert conductor_for_order(12) == 12


def test_unsupported_order_raises():
    with pytest.raises(UnsupportedFieldError):
        conductor_for_order(7)


def test_gaussian_point_is_cartesian():
    p = FieldCoord.point(3, Fraction(-1, 2))
    assert p.coeffs == (3, Fraction(-1, 2))
    assert p.to_complex() == complex(3, -0.5)


def test_i_squared_is_minus_one():
    i = FieldCoord.zeta(4, 1)
    assert i * i == -1


def test_zeta_power_wraps_to_one():
    for conductor in (4, 10, 12):
        assert FieldCoord.zeta(conductor, conductor) == 1
        assert FieldCoord.zeta(conductor, 1) ** conductor == 1


def test_inverse_and_division():
    x = FieldCoord(10, [1, 2, 0, -1])
    assert (x * x.inverse()) == 1
    assert (x / x) == 1
    with pytest.raises(ZeroDivisionError):
        FieldCoord.zero(10).inverse()


def test_conjugate_reflects_across_real_axis():
    z = FieldCoord.zeta(12, 1)
    assert abs(z.conjugate().to_complex() - z.to_complex().conjugate()) < 1e-12
    assert z * z.conjugate() == 1


def test_golden_ratio_identity():
    phi = golden_ratio()
    assert phi * phi == phi + 1
    assert abs(phi.real_float() - (1 + 5 ** 0.5) / 2) < 1e-12


def test_rotate_by_quarter_turn():
    p = FieldCoord.point(1, 0)
    assert p.rotate(1) == FieldCoord.point(0, 1)
    assert p.rotate(4) == p


def test_mixing_conductors_raises():
    with pytest.raises(UnsupportedFieldError):
        FieldCoord.zeta(4) + FieldCoord.zeta(10)


def test_signs_are_exact_at_zero():
    phi = golden_ratio()
    assert real_sign(phi * phi - phi - 1) == 0
    assert real_sign(phi - 1) == 1
    assert imag_sign(FieldCoord.point(5, 0)) == 0
    assert imag_sign(FieldCoord.point(0, -2)) == -1


def test_parse_and_format():
    assert parse_field_element('-1/2', 4) == FieldCoord.rational(4, Fraction(-1, 2))
    value = parse_field_element('(1, 0, 1, -1)', 10)
    assert value.coeffs == (1, 0, 1, -1)
    assert format_field_element(value) == '(1,0,1,-1)'
    assert parse_field_element(format_field_element(value), 10) == value


def test_parse_rejects_bad_tokens():
    with pytest.raises(RuleParseError):
        parse_field_element('x', 4)
    with pytest.raises(RuleParseError):
        parse_field_element('(1,2,3)', 4)
