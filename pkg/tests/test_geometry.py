import math
from fractions import Fraction

import pytest

from fml.boxes import Box, unit_box
from fml.quadrature import power_distance_integral
from hypothesis import example, given
from hypothesis.strategies import floats, tuples


HALF = Fraction(1, 2)
unit_points = floats(min_value=0.0, max_value=0.999)
radii = floats(min_value=1e-3, max_value=1.5)


def test_half_open_boxes_and_open_balls():
    # [0, 1) reaches 0, which is exactly at distance 1/2 from the center.
    assert not unit_box(1).inside_ball((HALF,), HALF)
    # [1/2, 1) only approaches 1.
    assert Box((HALF,), (Fraction(1),)).inside_ball((HALF,), HALF)
    assert Box((Fraction(1, 3),), (Fraction(2, 3),)).meets_ball((HALF,), Fraction(1, 5))
    assert not Box((Fraction(0),), (Fraction(1, 3),)).meets_ball((HALF,), Fraction(1, 6))


def test_box_ball_volumes_in_closed_form():
    box = unit_box(2, exact_coords=False)
    assert box.ball_volume((0.5, 0.5), 0.25) == pytest.approx(math.pi / 16, abs=1e-14)
    assert box.ball_volume((0.0, 0.5), 0.25) == pytest.approx(math.pi / 32, abs=1e-14)
    assert box.ball_volume((0.0, 0.0), 0.25) == pytest.approx(math.pi / 64, abs=1e-14)
    assert box.ball_volume((0.5, 0.5), 2.0) == pytest.approx(1.0, abs=1e-12)
    assert unit_box(1).ball_volume((0.9,), 0.2) == pytest.approx(0.3)


@given(tuples(unit_points, unit_points), radii)
@example((0.5, 0.5), 0.5)
def test_ball_volume_is_clipped_to_the_box(x, r):
    box = Box((Fraction(1, 4), Fraction(1, 8)), (Fraction(3, 4), Fraction(1, 2)))
    v = box.ball_volume(x, r)
    assert 0.0 <= v <= float(box.volume)
    if box.inside_ball(tuple(Fraction(c) for c in x), Fraction(r)):
        assert v == pytest.approx(float(box.volume), rel=1e-6)
    if not box.meets_ball(tuple(Fraction(c) for c in x), Fraction(r)):
        assert v == pytest.approx(0.0, abs=1e-12)


def test_inradius_ignores_domain_faces():
    box = Box((Fraction(0), Fraction(0)), (Fraction(1, 3), Fraction(1, 3)))
    assert box.inradius_at((Fraction(1, 6), Fraction(1, 6)), unit_box(2)) == Fraction(1, 6)
    assert box.inradius_at((Fraction(1, 12), Fraction(1, 6)), unit_box(2)) == Fraction(1, 6)
    assert box.inradius_at((Fraction(1, 12), Fraction(1, 6))) == Fraction(1, 12)
    assert unit_box(1).inradius_at((HALF,), unit_box(1)) is None


def test_split_at_a_point():
    pieces = unit_box(2).split((HALF, Fraction(1, 4)))
    assert len(pieces) == 4
    assert sum(p.volume for p in pieces) == 1
    assert unit_box(1).split((Fraction(2),)) == [unit_box(1)]


def test_power_integrals_in_one_dimension():
    # I-set of the base-7 root: [2/7, 5/7) around 1/2.
    region = Box((Fraction(2, 7),), (Fraction(5, 7),))
    assert power_distance_integral(region, (HALF,), 1.0) == pytest.approx(9 / 196, abs=1e-15)
    assert power_distance_integral(region, (HALF,), -0.5) == pytest.approx(4 * math.sqrt(3 / 14), abs=1e-14)
    assert power_distance_integral(region, (HALF,), 0.0) == 3 / 7


def test_power_integrals_in_two_dimensions():
    square = Box((-1.0, -1.0), (1.0, 1.0))
    assert power_distance_integral(square, (0.0, 0.0), 2.0) == pytest.approx(8 / 3, rel=1e-7)
    corner = unit_box(2, exact_coords=False)
    assert power_distance_integral(corner, (0.0, 0.0), -1.0) == pytest.approx(
        2 * math.log(1 + math.sqrt(2)), rel=1e-6)
    # Away from the center the integrand is smooth.
    far = Box((2.0, 0.0), (3.0, 1.0))
    assert power_distance_integral(far, (0.0, 0.0), 1.0) == pytest.approx(2.56595, rel=1e-4)


def test_power_integrals_need_an_integrable_power():
    with pytest.raises(ValueError):
        power_distance_integral(unit_box(1), (HALF,), -1.0)
    with pytest.raises(ValueError):
        power_distance_integral(unit_box(2), (HALF, HALF), -2.5)
