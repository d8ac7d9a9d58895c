from fractions import Fraction

import numpy as np
import pytest

from levelloop.services import continuum
from levelloop.services.loewner import Orientation


@pytest.fixture
def tower(stream, params):
    return continuum.build_tower(1, 3, 0j, stream, params=params)


def test_coarsened_tower_is_consistent(tower):
    assert tower.k_max == 3
    assert list(tower.ks) == [1, 2, 3]
    assert [seq.r for seq in tower.levels] == [Fraction(1, 2), Fraction(1, 4), Fraction(1, 8)]
    assert tower.sandwich_violations() == []
    assert tower.identity_violations() == []
    assert tower.tau_exact[-1] == Fraction(tower.N[-1], 16)


def test_refined_tower_is_consistent(stream, params):
    tower = continuum.build_tower(1, 3, 0j, stream, method="refine", params=params)
    assert tower.method == "refine"
    assert tower.sandwich_violations() == []
    assert tower.identity_violations() == []


def test_index_at(tower):
    seq = tower.level(3)
    assert tower.index_at(3, 0.0) == 0
    assert tower.index_at(3, 1 / 16) == 0
    assert tower.index_at(3, 1 / 16 + 1e-9) == 1
    assert tower.index_at(3, 100.0) == seq.N
    assert tower.loop_at(3, 100.0) is seq.final_loop
    with pytest.raises(ValueError):
        tower.level(4)


def test_tower_record(tower):
    record = tower.to_record()
    assert record.k == [1, 2, 3]
    assert record.N == list(tower.N)
    assert [len(row) for row in record.log_cr] == [n + 1 for n in tower.N]


def test_tower_arguments(stream, params):
    with pytest.raises(ValueError):
        continuum.build_tower(2, 2, 0j, stream, params=params)
    with pytest.raises(ValueError):
        continuum.build_tower(1, 9, 0j, stream, params=params)
    with pytest.raises(ValueError):
        continuum.build_tower(1, 2, 0j, stream, method="bisect", params=params)


def test_martingale_increments_are_nonnegative(tower):
    increments = continuum.martingale_increments(tower, [0.1, 0.25, 0.5, 1.0])
    assert increments.shape == (2, 4)
    assert np.all(increments >= -1e-12)


def test_martingale_check_needs_three_levels(stream, params):
    short = continuum.build_tower(1, 2, 0j, stream, params=params)
    with pytest.raises(ValueError):
        continuum.conformal_radius_martingale_check([short], [0.5])


def test_tower_report_gates(stream, params):
    outcomes = continuum.sample_towers(1, 2, 3, stream, params=params)
    report = continuum.tower_report(outcomes, stream, params=params)
    assert report.experiment_id == "refinement.tower"
    assert report.tests["sandwich_violations"].passed
    assert report.tests["identity_violations"].passed
    assert report.seeds.count == 3


def test_cadlag_on_one_tower(tower, params):
    report = continuum.cadlag_diagnostics(tower, params=params)
    assert report.tests["same_loop_distance_zero"].passed


def test_nested_cle_arguments(stream, params):
    with pytest.raises(ValueError):
        continuum.nested_cle_statistics(0, 0j, stream, params=params)
    with pytest.raises(ValueError):
        continuum.nested_cle_statistics(2, 0j, None, params=params)


def test_nested_generations_flip_orientation(stream, params):
    report = continuum.nested_cle_statistics(
        2, 0j, stream, n_runs=3, k=2, start=Orientation.COUNTERCLOCKWISE, params=params
    )
    assert report.experiment_id == "continuum.nested_cle"
    assert report.tests["first_generation_flipped"].passed
    assert "lag1_correlation_band" in report.tests


@pytest.mark.slow
def test_finest_transition_time_is_exponential(stream, params):
    outcomes = continuum.sample_towers(1, 4, 300, stream, params=params)
    report = continuum.tower_report(outcomes, stream, params=params)
    assert report.tests["P_tau_gt_1_band"].passed
    assert report.tests["ks_scaled_geometric"].passed
