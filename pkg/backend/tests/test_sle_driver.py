import numpy as np
import pytest

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import HeightOutOfRange, ThresholdNotReached
from levelloop.services.sle_driver import (
    RadialDriverPath,
    RadialDriverState,
    SleWeights,
    bessel_dimension,
    run_to_threshold,
    slit_chain,
    touch_and_reflect,
    trace_stability,
    weights_from_height,
)


def test_weights_from_height():
    weights = weights_from_height(0.5)
    assert weights.rho_left == -1.5
    assert weights.rho_right == -0.5
    assert weights.height == 0.5
    assert weights.mirrored() == weights_from_height(-0.5)


@pytest.mark.parametrize("height", [-1, 1, 1.5])
def test_heights_outside_the_interval(height):
    with pytest.raises(HeightOutOfRange):
        weights_from_height(height)
    with pytest.raises(ValueError):
        weights_from_height(height)


def test_weights_must_sum_to_minus_two():
    with pytest.raises(ValueError):
        SleWeights(-0.5, -0.5)


def test_bessel_dimension():
    assert bessel_dimension(-1) == 1.5
    assert weights_from_height(0).bessel_dimension("left") == 1.5


def test_reflection_keeps_gaps_above_the_floor():
    state = RadialDriverState(0.0, 1e-4, 1e-4)
    weights = weights_from_height(0)
    for noise in (-0.01, 0.01, -0.05):
        state = touch_and_reflect(state, weights, 1e-4, noise, delta_touch=1e-4)
        assert state.gap_left >= 1e-4
        assert state.gap_right >= 1e-4
        assert state.gap_left + state.gap_right <= 2 * np.pi + 1e-12
    with pytest.raises(ValueError):
        touch_and_reflect(state, weights, 0.0, 0.0)


def test_run_closes_the_loop(stream, params):
    run = run_to_threshold(weights_from_height(0), 0.0, stream, params=params)
    assert run.state.spread < params.delta_merge
    assert run.threshold_time == pytest.approx(run.chain.total_capacity)
    assert run.substeps >= len(run.chain)
    chain, threshold = run
    assert threshold == run.threshold_time


def test_run_is_reproducible(stream, params):
    a = run_to_threshold(weights_from_height(0.25), 0.0, stream, params=params)
    b = run_to_threshold(weights_from_height(0.25), 0.0, stream, params=params)
    other = run_to_threshold(weights_from_height(0.25), 0.0, stream.for_replica(1), params=params)
    assert np.array_equal(a.chain.durations, b.chain.durations)
    assert np.array_equal(a.chain.angles, b.chain.angles)
    assert not np.array_equal(a.chain.durations, other.chain.durations)


def test_mirrored_run_is_the_reflection(stream, params):
    run = run_to_threshold(weights_from_height(0.25), 0.0, stream, params=params)
    mirror = run_to_threshold(weights_from_height(-0.25), 0.0, stream, params=params, mirror=True)
    assert np.array_equal(run.chain.durations, mirror.chain.durations)
    assert np.allclose(np.exp(1j * mirror.chain.angles), np.conj(np.exp(1j * run.chain.angles)))
    assert run.right_dominant != mirror.right_dominant


def test_seed_angle_rotates_the_chain(stream, params):
    run = run_to_threshold(weights_from_height(0), 0.0, stream, params=params)
    turned = run_to_threshold(weights_from_height(0), 1.0, stream, params=params)
    assert len(run.chain) == len(turned.chain)
    assert np.allclose(np.exp(1j * turned.chain.angles), np.exp(1j * (run.chain.angles + 1.0)))


def test_recorded_path(stream, params, tmp_path):
    run = run_to_threshold(weights_from_height(0), 0.0, stream, params=params, record_path=True)
    frame = run.path.to_frame()
    assert list(frame.columns) == ["t", "w", "v_left", "v_right"]
    assert len(frame) == run.substeps + 1
    assert run.path.threshold_time == run.threshold_time
    run.path.to_csv(tmp_path / "driver.csv")
    assert (tmp_path / "driver.csv").read_text().startswith("t,w,v_left,v_right")


def test_capacity_cap(stream):
    params = EngineParams(step=1e-2, delta_touch=1e-4, delta_merge=1e-3, hard_cap=1e-3)
    with pytest.raises(ThresholdNotReached):
        run_to_threshold(weights_from_height(0), 0.0, stream, params=params)


def test_stream_is_required(params):
    with pytest.raises(ValueError):
        run_to_threshold(weights_from_height(0), params=params)


def test_reslitting_the_recorded_path_gives_the_run_chain(stream, params):
    run = run_to_threshold(weights_from_height(0.25), 0.0, stream, params=params, record_path=True)
    chain = slit_chain(run.path.t, run.path.w, params.step, params.max_slit_angle)
    assert len(chain) == len(run.chain)
    assert np.allclose(chain.durations, run.chain.durations, rtol=1e-9)
    assert np.array_equal(chain.angles, run.chain.angles)


def test_slit_chain_needs_a_driving_function():
    with pytest.raises(ValueError):
        slit_chain([0.0], [0.0], 1e-3)
    with pytest.raises(ValueError):
        slit_chain([0.0, 1e-3], [0.0], 1e-3)


def test_traces_are_stable_under_step_halving():
    times = np.linspace(0.0, 0.05, 501)
    path = RadialDriverPath(t=times.tolist(), w=(0.2 * times).tolist())
    distance = trace_stability(path, 2e-3, DEFAULT_PARAMS)
    assert 0 <= distance < DEFAULT_PARAMS.trace_tol
    still = RadialDriverPath(t=times.tolist(), w=[0.0] * times.size)
    assert trace_stability(still, 2e-3, DEFAULT_PARAMS) < 1e-9


def test_trace_stability_on_a_driver_run(stream, params):
    fine = params.with_step(params.step / 2)
    run = run_to_threshold(weights_from_height(0), 0.0, stream, params=fine, record_path=True)
    distance = trace_stability(run.path, params.step, params)
    assert np.isfinite(distance) and distance >= 0
