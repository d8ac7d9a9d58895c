import numpy as np
import pytest

from levelloop.services import conformal


@pytest.fixture
def circle():
    theta = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    return np.exp(1j * theta)


def test_winding_and_containment(circle):
    assert conformal.winding_number(circle, 0.3j) == pytest.approx(1)
    assert conformal.winding_number(circle[::-1], 0.3j) == pytest.approx(-1)
    assert conformal.winding_number(circle, 2.0) == pytest.approx(0, abs=1e-9)
    assert conformal.contains(circle, 0.5)
    assert not conformal.contains(circle, 1.5)


def test_signed_area_follows_orientation(circle):
    assert conformal.signed_area(circle) == pytest.approx(np.pi, rel=1e-3)
    assert conformal.signed_area(circle[::-1]) == pytest.approx(-np.pi, rel=1e-3)


def test_distances(circle):
    assert conformal.distance_to_polyline(circle, 0j) == pytest.approx(1, abs=1e-3)
    assert conformal.hausdorff_distance(circle, 0.5 * circle) == pytest.approx(0.5, abs=1e-3)


def test_resample_is_equally_spaced(circle):
    points = conformal.resample(circle, 50)
    gaps = np.abs(np.diff(np.append(points, points[0])))
    assert points.size == 50
    assert gaps.max() - gaps.min() < 1e-3


def test_self_crossings():
    t = np.linspace(0, 2 * np.pi, 300, endpoint=False) + 0.0123
    figure_eight = np.sin(t) + 1j * np.sin(t) * np.cos(t)
    square = np.array([0, 1, 1 + 1j, 1j])
    assert conformal.self_crossings(square) == 0
    assert conformal.self_crossings(figure_eight) >= 1


def test_charge_simulation_map_of_a_disk():
    theta = np.linspace(0, 2 * np.pi, 300, endpoint=False)
    mapping = conformal.ChargeSimulationMap(2 * np.exp(1j * theta), 0j)
    assert mapping.residual < 1e-4
    assert mapping.log_cr == pytest.approx(-np.log(2), abs=1e-3)
    samples = mapping.boundary_samples(8)
    assert np.allclose(np.abs(samples), 2, atol=1e-2)
