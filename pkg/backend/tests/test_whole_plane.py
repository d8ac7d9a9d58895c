import math

import numpy as np
import pytest

from levelloop.services import whole_plane
from levelloop.services.loewner import Orientation


def test_inversion_is_an_involution():
    points = np.array([0.3 + 0.1j, -2.0, 1j])
    assert np.allclose(whole_plane.invert(whole_plane.invert(points, 0.25), 0.25), points)


def test_exterior_sequence_starts_on_the_small_circle(stream, params):
    loops = whole_plane.exterior_sequence(0.25, 0.5, 0.0, stream, params=params)
    first = loops[0]
    assert first.log_cr_infinity == pytest.approx(math.log(0.25))
    assert np.allclose(np.abs(first.vertices), 0.25)
    assert first.inradius == pytest.approx(0.25)
    assert all(loop.log_cr_infinity <= 0.0 for loop in loops)
    assert all(b.log_cr_infinity > a.log_cr_infinity for a, b in zip(loops, loops[1:]))


def test_plane_orientation_is_the_flipped_disk_orientation(stream, params):
    loops = whole_plane.exterior_sequence(0.25, 0.5, 0.0, stream, start=Orientation.COUNTERCLOCKWISE, params=params)
    for loop in loops:
        assert loop.orientation is loop.loop.orientation.flipped()
    assert loops[0].orientation is Orientation.CLOCKWISE


def test_loops_grow_outward(stream, params):
    loops = whole_plane.exterior_sequence(0.1, 0.5, 1.0, stream, params=params)
    radii = [loop.outradius for loop in loops]
    assert radii[-1] >= radii[0]
    assert all(loop.inradius <= loop.outradius for loop in loops)


def test_loop_at_index(stream, params):
    loops = whole_plane.exterior_sequence(0.25, 0.5, 0.0, stream, params=params)
    assert whole_plane.loop_at_index(loops, math.log(0.25)) is loops[0]
    assert whole_plane.loop_at_index(loops, 0.0) is loops[-1]
    with pytest.raises(ValueError):
        whole_plane.loop_at_index(loops, -10.0)


def test_arguments(stream, params):
    with pytest.raises(ValueError):
        whole_plane.exterior_sequence(1.5, 0.5, 0.0, stream, params=params)
    with pytest.raises(ValueError):
        whole_plane.exterior_sequence(0.25, 0.5, math.inf, stream, params=params)
    with pytest.raises(ValueError):
        whole_plane.bi_infinite_window(0.0, 0.5, stream, params=params)
    with pytest.raises(ValueError):
        whole_plane.epsilon_convergence_report(0.1, 0.2, 10, stream, params=params)


def test_bi_infinite_window(stream, params):
    loops = whole_plane.bi_infinite_window(0.5, 0.5, stream, params=params)
    assert all(-0.5 <= loop.log_cr_infinity <= 0.5 for loop in loops)


def test_zero_loop_summary(stream, params):
    summary = whole_plane.zero_loop_summary(0.25, 0.5, stream, params)
    assert summary.orientation in ("clockwise", "counterclockwise")
    assert summary.log_cr_infinity <= 0.0
    assert summary.inradius <= summary.outradius
    assert abs(summary.height_step) in (0.0, 0.5)


@pytest.mark.slow
def test_transience(stream, params):
    report = whole_plane.transience_report(40, stream, n_inward=20, t_outward=2.0, params=params)
    assert report.tests["inward_shrinks"].passed
    assert report.tests["koebe_inradius_bound"].passed
