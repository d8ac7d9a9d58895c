import math

import numpy as np
import pytest

from levelloop.config import DEFAULT_PARAMS
from levelloop.errors import SampleTooSmall
from levelloop.schemas import McReport
from levelloop.services import statistics
from levelloop.services.rng import StreamId
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import ReplicaOutcome

EXP1_QUANTILES = -np.log1p(-(np.arange(1, 1001) - 0.5) / 1000)


def test_ks_against_exact_quantiles():
    result = statistics.ks_test(EXP1_QUANTILES, "exp1")
    assert result.statistic == pytest.approx(5e-4, abs=1e-9)
    assert result.p_value > 0.999
    statistic, p_value = result
    assert statistic == result.statistic


def test_ks_rejects_a_wrong_rate():
    result = statistics.ks_test(EXP1_QUANTILES / 2, "exp1")
    assert result.p_value < statistics.GATE_ALPHA


def test_ks_arguments():
    with pytest.raises(SampleTooSmall):
        statistics.ks_test(np.ones(10))
    with pytest.raises(ValueError):
        statistics.ks_test(EXP1_QUANTILES, "geometric")
    with pytest.raises(ValueError):
        statistics.ks_test(EXP1_QUANTILES, "empirical")
    with pytest.raises(ValueError):
        statistics.ks_test(EXP1_QUANTILES, "normal")


def test_two_sample_ks_of_identical_samples():
    result = statistics.ks_test(EXP1_QUANTILES, "empirical", reference=EXP1_QUANTILES)
    assert result.statistic == 0.0


def test_geometric_cdf():
    cdf = statistics.geometric_cdf(0.5)
    assert cdf(0.5) == 0.0
    assert cdf(1) == 0.5
    assert cdf(2) == 0.75
    scaled = statistics.geometric_cdf(0.25, scale=0.25)
    assert scaled(0.5) == pytest.approx(1 - 0.75**2)
    with pytest.raises(ValueError):
        statistics.geometric_cdf(0)


def test_scaled_geometric_approaches_exp1():
    coarse = statistics.geometric_exp1_distance(0.25, 0.25)
    fine = statistics.geometric_exp1_distance(1 / 64, 1 / 64)
    assert fine < coarse
    assert fine < 1 / 64


def test_binomial_band():
    z, passed = statistics.binomial_band(50, 100, 0.5)
    assert z == 0.0 and passed
    z, passed = statistics.binomial_band(80, 100, 0.5)
    assert z == pytest.approx(6.0)
    assert not passed
    with pytest.raises(SampleTooSmall):
        statistics.binomial_band(0, 0, 0.5)


def test_mean_band():
    z, passed = statistics.mean_band([0.9, 1.1, 1.0, 1.0], 1.0)
    assert z == pytest.approx(0.0)
    assert passed


def test_geometric_chi_square_on_a_geometric_sample():
    sample = np.random.default_rng(7).geometric(0.25, 2000)
    _, p_value = statistics.geometric_chi_square(sample, 0.25)
    assert p_value > statistics.GATE_ALPHA
    _, p_wrong = statistics.geometric_chi_square(sample, 0.5)
    assert p_wrong < statistics.GATE_ALPHA


def test_runs_and_lag_correlation():
    alternating = np.tile([0.0, 1.0], 50)
    z, p = statistics.runs_test(alternating)
    assert z > 3 and p < 0.01
    rho, z = statistics.lag1_correlation(alternating)
    assert rho == pytest.approx(-1.0)
    with pytest.raises(SampleTooSmall):
        statistics.lag1_correlation([1.0, 2.0])


def test_lag_correlation_pairs_stay_within_each_series():
    up, down = [0.0, 1.0, 0.0, 1.0], [1.0, 0.0, 1.0, 0.0]
    rho, z = statistics.lag1_correlation(up, down)
    assert rho == pytest.approx(-1.0)
    assert z == pytest.approx(-math.sqrt(6))
    joined, _ = statistics.lag1_correlation(up + down)
    assert joined == pytest.approx(-0.75)
    with pytest.raises(SampleTooSmall):
        statistics.lag1_correlation([1.0, 2.0], [3.0], [])


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    slope, constant = statistics.loglog_slope(x, 3 * x**2)
    assert slope == pytest.approx(2.0)
    assert constant == pytest.approx(3.0)
    assert math.isnan(statistics.loglog_slope([1.0], [1.0])[0])


def test_report_builder_gates():
    report = ReportBuilder("loop_laws.example", "an anchor")
    report.value("x", 1.5, 0.1)
    report.estimate("mean", [1.0, 2.0, 3.0])
    report.binomial("P_hit", 50, 100, 0.5)
    report.gate("soft_gate", 9.0, False, hard=False)
    report.failures([ReplicaOutcome(0, 1.0), ReplicaOutcome(1, error="NoLoopFound"), ReplicaOutcome(2, error="NoLoopFound")])
    report.param("r", 0.5)
    report.note("hello")
    built = report.build(StreamId(11), 3, DEFAULT_PARAMS)

    assert built.passed
    assert built.estimates["mean"].value == 2.0
    assert built.estimates["P_hit"].value == 0.5
    assert built.tests["P_hit_band"].passed
    assert built.failures == {"NoLoopFound": 2}
    assert built.engine_params["r"] == 0.5
    assert built.engine_params["step"] == DEFAULT_PARAMS.step
    assert built.seeds.seed == 11 and built.seeds.count == 3
    assert built.notes == ["hello"]


def test_hard_failure_fails_the_report():
    report = ReportBuilder("loop_laws.example", "an anchor")
    report.gate("exact", 1, False)
    assert not report.build(StreamId(0), 1).passed


def test_small_ks_sample_is_a_failed_gate():
    report = ReportBuilder("loop_laws.example", "an anchor")
    report.ks("tiny", [1.0, 2.0])
    built = report.build(StreamId(0), 2)
    assert not built.passed
    assert math.isnan(built.tests["tiny"].statistic)
    assert built.notes


def test_json_line_leaves_out_the_runtime():
    built = ReportBuilder("loop_laws.example", "an anchor").build(StreamId(5), 1)
    line = built.to_json_line()
    assert "runtime_s" not in line
    assert "runtime_s" in built.to_json_line(include_runtime=True)
    assert McReport.model_validate_json(line).seeds.seed == 5
