from fractions import Fraction

import numpy as np
import pytest

from levelloop.errors import AmbiguousWinding, LedgerError
from levelloop.services import conformal
from levelloop.services.level_loops import (
    BoundaryLedger,
    Side,
    as_fraction,
    clockwise_probability,
    effective_height,
    log_cr_offset,
    orientation_of,
    sample_level_loop,
    touches_boundary,
)
from levelloop.services.loewner import Orientation, OrientedLoop


def test_as_fraction_is_exact_for_decimal_text():
    assert as_fraction("0.1") == Fraction(1, 10)
    assert as_fraction(0.1) == Fraction(1, 10)
    assert as_fraction(3) == Fraction(3)
    half = Fraction(1, 2)
    assert as_fraction(half) is half


def test_ledger_for_height():
    ledger = BoundaryLedger.for_height(Fraction(1, 2))
    assert ledger.left_value == Fraction(-3, 2)
    assert ledger.right_value == Fraction(1, 2)
    assert ledger.interior_value(Orientation.COUNTERCLOCKWISE) == Fraction(-3, 2)
    assert ledger.interior_value(Orientation.CLOCKWISE) == Fraction(1, 2)


def test_ledger_gap_is_two():
    with pytest.raises(LedgerError):
        BoundaryLedger(0, 1)


def test_effective_height_of_the_first_upward_loop():
    ledger = BoundaryLedger.for_height(-1)
    assert effective_height(Fraction(-1, 2), ledger, Side.INSIDE_LEFT) == Fraction(-1, 2)
    assert effective_height(Fraction(-1, 2), ledger, Side.INSIDE_RIGHT) == Fraction(3, 2)


def test_clockwise_probability():
    assert clockwise_probability(0) == 0.5
    assert clockwise_probability(Fraction(-1, 2)) == 0.25
    assert clockwise_probability("0.5") == 0.75


def test_log_cr_offset():
    assert log_cr_offset(0j) == 0.0
    assert log_cr_offset(0.5) == pytest.approx(-np.log(0.75))


def test_sampled_loop_surrounds_the_target(stream, params):
    loop = sample_level_loop(Fraction(0), 0j, stream, params=params)
    assert loop.orientation in (Orientation.CLOCKWISE, Orientation.COUNTERCLOCKWISE)
    assert loop.height_lambda == 0
    assert loop.log_cr > 0
    assert loop.log_cr == pytest.approx(loop.uniformizer.total_capacity)
    assert conformal.contains(loop.vertices, 0j)
    assert np.all(np.abs(loop.vertices) < 1)
    assert loop.inradius <= loop.conformal_radius <= loop.outradius


def test_mirrored_loop_has_the_opposite_orientation(stream, params):
    loop = sample_level_loop(Fraction(1, 4), 0j, stream, params=params)
    mirror = sample_level_loop(Fraction(-1, 4), 0j, stream, params=params, mirror=True)
    assert mirror.orientation is loop.orientation.flipped()
    assert mirror.log_cr == loop.log_cr


def test_off_center_target(stream, params):
    loop = sample_level_loop(Fraction(0), 0.3 + 0j, stream, params=params)
    assert loop.target == 0.3
    assert loop.log_cr > log_cr_offset(0.3)
    assert conformal.contains(loop.vertices, 0.3)


def test_invalid_inputs(stream, params):
    with pytest.raises(ValueError):
        sample_level_loop(0, 1.2 + 0j, stream, params=params)
    with pytest.raises(ValueError):
        sample_level_loop(1, 0j, stream, params=params)


def test_unit_circle_touches_the_boundary():
    assert touches_boundary(OrientedLoop.unit_circle(Orientation.COUNTERCLOCKWISE, -1))


def test_orientation_of_a_polyline():
    square = np.array([0.5 + 0.5j, -0.5 + 0.5j, -0.5 - 0.5j, 0.5 - 0.5j])
    assert orientation_of(square) is Orientation.COUNTERCLOCKWISE
    assert orientation_of(square[::-1]) is Orientation.CLOCKWISE
    assert orientation_of(square / 4 + 0.1, 0.1) is Orientation.COUNTERCLOCKWISE
    with pytest.raises(AmbiguousWinding):
        orientation_of(square, 0.9)
