"""
Exact cyclotomic coordinates for substitution rules.
A planar point is one element of Q(zeta_F) read as a complex number, stored as
rational coefficients over the power basis 1, zeta, ..., zeta^(phi(F)-1).
"""

import cmath
import math
import re
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, List, Tuple, Union

from .utils import RuleParseError, UnsupportedFieldError

Rational = Union[int, Fraction]

SUPPORTED_ORDERS = (1, 4, 5, 10, 12)

# Declared point-group order -> field conductor. Orders 1 and 4 need i for planar points.
_CONDUCTOR = {1: 4, 4: 4, 5: 10, 10: 10, 12: 12}

# Cyclotomic polynomials, constant term first.
_CYCLOTOMIC = {
    4: (1, 0, 1),
    10: (1, -1, 1, -1, 1),
    12: (1, 0, -1, 0, 1),
}


def conductor_for_order(order: int) -> int:
    """
    Return the field conductor used for a declared rotation order.

    Args:
        order: Declared point-group order n

    Returns:
        Conductor F with zeta_n in Q(zeta_F) and i or a planar basis available
    """
    if order not in _CONDUCTOR:
        raise UnsupportedFieldError(
            f"cyclotomic order {order} is not supported (use one of {SUPPORTED_ORDERS})"
        )
    return _CONDUCTOR[order]


def _degree(conductor: int) -> int:
    return len(_CYCLOTOMIC[conductor]) - 1


def _normalize(value: Rational) -> Rational:
    if isinstance(value, Fraction) and value.denominator == 1:
        return int(value.numerator)
    return value


def _reduce(coeffs: List[Rational], conductor: int) -> Tuple[Rational, ...]:
    poly = _CYCLOTOMIC[conductor]
    dim = len(poly) - 1
    coeffs = list(coeffs)
    for k in range(len(coeffs) - 1, dim - 1, -1):
        c = coeffs[k]
        if c:
            coeffs[k] = 0
            # x^dim = -(poly[0] + poly[1] x + ... + poly[dim-1] x^(dim-1))
            for j in range(dim):
                if poly[j]:
                    coeffs[k - dim + j] -= c * poly[j]
    out = coeffs[:dim] + [0] * max(0, dim - len(coeffs))
    return tuple(_normalize(c) for c in out)


@lru_cache(maxsize=None)
def _root_powers(conductor: int) -> Tuple[complex, ...]:
    return tuple(cmath.exp(2j * math.pi * k / conductor) for k in range(_degree(conductor)))


class FieldCoord:
    """An element of the cyclotomic field Q(zeta_F), used as an exact planar coordinate."""

    __slots__ = ('conductor', 'coeffs', '_hash')

    def __init__(self, conductor: int, coeffs: Iterable[Rational]):
        if conductor not in _CYCLOTOMIC:
            raise UnsupportedFieldError(f"no coordinate field with conductor {conductor}")
        self.conductor = conductor
        coeffs = list(coeffs)
        if len(coeffs) > _degree(conductor):
            self.coeffs = _reduce(coeffs, conductor)
        else:
            coeffs = coeffs + [0] * (_degree(conductor) - len(coeffs))
            self.coeffs = tuple(_normalize(c) for c in coeffs)
        self._hash = None

    # Constructors

    @classmethod
    def zero(cls, conductor: int) -> 'FieldCoord':
        return cls(conductor, [])

    @classmethod
    def rational(cls, conductor: int, value: Rational) -> 'FieldCoord':
        return cls(conductor, [value])

    @classmethod
    def point(cls, x: Rational, y: Rational) -> 'FieldCoord':
        """Cartesian point (x, y) in the Gaussian field (conductor 4)."""
        return cls(4, [x, y])

    @classmethod
    def zeta(cls, conductor: int, power: int = 1) -> 'FieldCoord':
        return _zeta_power(conductor, power % conductor)

    # Arithmetic

    def _coerce(self, other: Union['FieldCoord', Rational]) -> 'FieldCoord':
        if isinstance(other, FieldCoord):
            if other.conductor != self.conductor:
                raise UnsupportedFieldError(
                    f"mixing conductors {self.conductor} and {other.conductor}"
                )
            return other
        if isinstance(other, (int, Fraction)):
            return FieldCoord.rational(self.conductor, other)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return FieldCoord(self.conductor, [a + b for a, b in zip(self.coeffs, other.coeffs)])

    __radd__ = __add__

    def __neg__(self):
        return FieldCoord(self.conductor, [-a for a in self.coeffs])

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return FieldCoord(self.conductor, [a - b for a, b in zip(self.coeffs, other.coeffs)])

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return FieldCoord(self.conductor, [a * other for a in self.coeffs])
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        product = [0] * (2 * len(self.coeffs) - 1)
        for i, a in enumerate(self.coeffs):
            if not a:
                continue
            for j, b in enumerate(other.coeffs):
                if b:
                    product[i + j] += a * b
        return FieldCoord(self.conductor, _reduce(product, self.conductor))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return FieldCoord(self.conductor, [Fraction(a) / other for a in self.coeffs])
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self * other.inverse()

    def __pow__(self, exponent: int) -> 'FieldCoord':
        if exponent < 0:
            return self.inverse() ** (-exponent)
        result = FieldCoord.rational(self.conductor, 1)
        base = self
        while exponent:
            if exponent & 1:
                result = result * base
            base = base * base
            exponent >>= 1
        return result

    def inverse(self) -> 'FieldCoord':
        """Multiplicative inverse, by solving the multiplication-by-self system over Q."""
        if self.is_zero():
            raise ZeroDivisionError("inverse of zero field element")
        dim = len(self.coeffs)
        # Column j holds the coefficients of self * zeta^j.
        columns = [(self * _zeta_power(self.conductor, j)).coeffs for j in range(dim)]
        matrix = [[Fraction(columns[j][i]) for j in range(dim)] + [Fraction(1 if i == 0 else 0)]
                  for i in range(dim)]
        for col in range(dim):
            pivot = next(r for r in range(col, dim) if matrix[r][col] != 0)
            matrix[col], matrix[pivot] = matrix[pivot], matrix[col]
            pv = matrix[col][col]
            matrix[col] = [v / pv for v in matrix[col]]
            for r in range(dim):
                if r != col and matrix[r][col] != 0:
                    factor = matrix[r][col]
                    matrix[r] = [a - factor * b for a, b in zip(matrix[r], matrix[col])]
        return FieldCoord(self.conductor, [matrix[i][dim] for i in range(dim)])

    def conjugate(self) -> 'FieldCoord':
        """Complex conjugate (reflection across the real axis)."""
        acc = [0] * len(self.coeffs)
        for j, c in enumerate(self.coeffs):
            if not c:
                continue
            for i, b in enumerate(_zeta_power(self.conductor, (-j) % self.conductor).coeffs):
                if b:
                    acc[i] += c * b
        return FieldCoord(self.conductor, acc)

    def rotate(self, power: int) -> 'FieldCoord':
        """Multiply by zeta_F^power."""
        power %= self.conductor
        if power == 0:
            return self
        return self * _zeta_power(self.conductor, power)

    # Queries

    def is_zero(self) -> bool:
        return not any(self.coeffs)

    def to_complex(self) -> complex:
        return sum((float(c) * w for c, w in zip(self.coeffs, _root_powers(self.conductor)) if c),
                   0j)

    def real_float(self) -> float:
        return self.to_complex().real

    def imag_float(self) -> float:
        return self.to_complex().imag

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = FieldCoord.rational(self.conductor, other)
        if not isinstance(other, FieldCoord):
            return NotImplemented
        return self.conductor == other.conductor and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.conductor, self.coeffs))
        return self._hash

    def __repr__(self) -> str:
        return f"FieldCoord({self.conductor}, {format_field_element(self)})"


@lru_cache(maxsize=None)
def _zeta_power(conductor: int, power: int) -> FieldCoord:
    dim = _degree(conductor)
    coeffs = [0] * (power + 1)
    coeffs[power] = 1
    if power < dim:
        return FieldCoord(conductor, coeffs)
    return FieldCoord(conductor, _reduce(coeffs, conductor))


def real_sign(value: FieldCoord) -> int:
    """
    Sign of a real-valued field element.

    Zero is decided exactly; nonzero values take the sign of their floating evaluation.
    """
    if value.is_zero():
        return 0
    return 1 if value.real_float() > 0 else -1


def imag_sign(value: FieldCoord) -> int:
    """Sign of the imaginary part, with zero decided exactly."""
    if (value - value.conjugate()).is_zero():
        return 0
    return 1 if value.imag_float() > 0 else -1


_VECTOR = re.compile(r'^[\(\[](.*)[\)\]]$')


def _parse_rational(text: str) -> Fraction:
    try:
        return Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise RuleParseError(f"'{text.strip()}' is not a rational number")


def parse_field_element(text: str, conductor: int) -> FieldCoord:
    """
    Parse a field element: a rational like ``2`` or ``-1/2``, or a coefficient
    vector like ``(1,0,1,-1)`` over the powers of zeta.

    Args:
        text: Token to parse
        conductor: Field conductor

    Returns:
        Parsed FieldCoord
    """
    text = text.strip()
    match = _VECTOR.match(text)
    if match:
        parts = [p for p in match.group(1).split(',') if p.strip()]
        if len(parts) > _degree(conductor):
            raise RuleParseError(
                f"coefficient vector '{text}' longer than field degree {_degree(conductor)}"
            )
        return FieldCoord(conductor, [_parse_rational(p) for p in parts])
    return FieldCoord.rational(conductor, _parse_rational(text))


def format_field_element(value: FieldCoord) -> str:
    """Inverse of parse_field_element (always vector form)."""
    return "(" + ",".join(str(c) for c in value.coeffs) + ")"


def golden_ratio() -> FieldCoord:
    """phi = zeta_10 + zeta_10^-1, exact in the order-10 field."""
    z = FieldCoord.zeta(10, 1)
    return z + z.conjugate()
