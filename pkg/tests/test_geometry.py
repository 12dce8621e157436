import pytest

from delone_rectifier.core.field import FieldCoord
from delone_rectifier.core.geometry import (centroid_exact, convex_pieces_xy, diameter_sq_xy,
                                            inradius_lower_bound_xy, interiors_disjoint, is_simple,
                                            on_segment, orientation, point_in_polygon, polygon_area_xy,
                                            polygon_contains,
                                            signed_area, signed_area_form, to_xy)

P = FieldCoord.point


def square(x=0, y=0, side=1):
    return (P(x, y), P(x + side, y), P(x + side, y + side), P(x, y + side))


CHAIR = (P(0, 0), P(2, 0), P(2, 1), P(1, 1), P(1, 2), P(0, 2))


def test_orientation():
    assert orientation(P(0, 0), P(1, 0), P(0, 1)) == 1
    assert orientation(P(0, 0), P(0, 1), P(1, 0)) == -1
    assert orientation(P(0, 0), P(1, 1), P(2, 2)) == 0


def test_on_segment():
    assert on_segment(P(1, 1), P(0, 0), P(2, 2))
    assert not on_segment(P(3, 3), P(0, 0), P(2, 2))


def test_area_form_is_four_i_times_area():
    form = signed_area_form(square(side=2))
    assert form == FieldCoord(4, [0, 16])
    assert signed_area(CHAIR) == pytest.approx(3.0)


def test_point_in_polygon_classifies_boundary():
    assert point_in_polygon(P(1, 1), square(side=2)) == 1
    assert point_in_polygon(P(2, 1), square(side=2)) == 0
    assert point_in_polygon(P(3, 1), square(side=2)) == -1


def test_simplicity():
    assert is_simple(CHAIR)
    bowtie = (P(0, 0), P(1, 1), P(1, 0), P(0, 1))
    assert not is_simple(bowtie)


def test_disjoint_and_containment():
    assert interiors_disjoint(square(0, 0), square(1, 0))
    assert not interiors_disjoint(square(0, 0, 2), square(1, 1))
    assert polygon_contains(square(0, 0, 4), square(1, 1, 2))
    assert not polygon_contains(square(0, 0, 2), square(1, 1, 2))


def test_centroid_of_square():
    c = centroid_exact(square(0, 0, 2))
    assert c == P(1, 1)


def test_chair_inradius_is_one_half():
    xy = to_xy(CHAIR)
    pieces = convex_pieces_xy(xy)
    assert len(pieces) == 2
    assert sum(abs(polygon_area_xy(p)) for p in pieces) == pytest.approx(3.0)
    assert inradius_lower_bound_xy(xy) == pytest.approx(0.5, abs=1e-9)


def test_square_inradius_and_diameter():
    xy = to_xy(square(0, 0, 1))
    assert inradius_lower_bound_xy(xy) == pytest.approx(0.5, abs=1e-9)
    assert diameter_sq_xy(xy) == pytest.approx(2.0)
