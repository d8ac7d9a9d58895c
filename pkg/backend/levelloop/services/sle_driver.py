"""Driving process of radial SLE_4(rho_L; rho_R) with force points next to the seed.

Angles run counterclockwise. The left force point sits clockwise of the driver and the
right one counterclockwise, at gaps g_L = W - V_L and g_R = V_R - W. With kappa = 4:

    dW   = 2 dB + (rho_L/2) cot(g_L/2) dt - (rho_R/2) cot(g_R/2) dt
    dg_L = 2 dB + (1 + rho_L/2) cot(g_L/2) dt - (rho_R/2) cot(g_R/2) dt
    dg_R = -2 dB + (1 + rho_R/2) cot(g_R/2) dt - (rho_L/2) cot(g_L/2) dt

Each gap behaves like a Bessel process of dimension 1 + 2(rho + 2)/kappa near zero. The
loop closes when the driver and both force points meet again on the circle, i.e. when
the larger gap fills the circle up to delta_merge.
"""

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import ClassVar

import numpy as np
import pandas as pd

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import HeightOutOfRange, ThresholdNotReached
from levelloop.services import conformal
from levelloop.services.loewner import TWO_PI, LoewnerChain, trace_at
from levelloop.services.rng import GaussianBlocks, StreamId

logger = logging.getLogger(__name__)

# relative slack on the slit capacity threshold
SLIT_RTOL = 1e-9


@dataclass(frozen=True)
class SleWeights:
    rho_left: float
    rho_right: float
    kappa: ClassVar[float] = 4.0

    def __post_init__(self):
        if not (-2 < self.rho_left < 0 and -2 < self.rho_right < 0):
            raise HeightOutOfRange(self.height)
        if abs(self.rho_left + self.rho_right + 2) > 1e-12:
            raise ValueError(f"weights ({self.rho_left}, {self.rho_right}) do not come from a single height")

    @property
    def height(self) -> float:
        return self.rho_right + 1

    def bessel_dimension(self, side: str) -> float:
        rho = self.rho_left if side == "left" else self.rho_right
        return 1 + 2 * (rho + 2) / self.kappa

    def mirrored(self) -> "SleWeights":
        return SleWeights(self.rho_right, self.rho_left)


def weights_from_height(u) -> SleWeights:
    if not -1 < u < 1:
        raise HeightOutOfRange(u)
    u = float(Fraction(u)) if isinstance(u, Fraction) else float(u)
    return SleWeights(-u - 1, u - 1)


def bessel_dimension(rho: float, kappa: float = 4.0) -> float:
    return 1 + 2 * (rho + 2) / kappa


@dataclass(frozen=True)
class RadialDriverState:
    w: float
    gap_left: float
    gap_right: float
    time: float = 0.0

    @property
    def v_left(self) -> float:
        return self.w - self.gap_left

    @property
    def v_right(self) -> float:
        return self.w + self.gap_right

    @property
    def spread(self) -> float:
        """Circle arc not covered by the larger gap."""
        return TWO_PI - max(self.gap_left, self.gap_right)

    def mirrored(self) -> "RadialDriverState":
        return RadialDriverState(-self.w, self.gap_right, self.gap_left, self.time)


def _gap_drift(own_cot: float, other_cot: float, rho_own: float, rho_other: float) -> float:
    return (1 + 0.5 * rho_own) * own_cot - 0.5 * rho_other * other_cot


def _reflect(gap: float, floor: float) -> float:
    if gap < floor:
        gap = 2 * floor - gap
    return max(gap, floor)


def touch_and_reflect(
    state: RadialDriverState, weights: SleWeights, dt: float, noise: float, delta_touch: float = DEFAULT_PARAMS.delta_touch
) -> RadialDriverState:
    """One Euler step of (W, g_L, g_R); gaps that dip below delta_touch are reflected."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if state.gap_left < 0 or state.gap_right < 0:
        raise ValueError("gaps must be nonnegative")
    cot_left = 1 / math.tan(state.gap_left / 2)
    cot_right = 1 / math.tan(state.gap_right / 2)
    drift_w = 0.5 * weights.rho_left * cot_left - 0.5 * weights.rho_right * cot_right
    w = state.w + 2 * noise + drift_w * dt
    gap_left = state.gap_left + _gap_drift(cot_left, cot_right, weights.rho_left, weights.rho_right) * dt + 2 * noise
    gap_right = state.gap_right + _gap_drift(cot_right, cot_left, weights.rho_right, weights.rho_left) * dt - 2 * noise
    gap_left = _reflect(gap_left, delta_touch)
    gap_right = _reflect(gap_right, delta_touch)
    total = gap_left + gap_right
    if total > TWO_PI:
        gap_left, gap_right = gap_left * (TWO_PI / total), gap_right * (TWO_PI / total)
    return RadialDriverState(w, gap_left, gap_right, state.time + dt)


def adaptive_dt(state: RadialDriverState, params: EngineParams) -> float:
    margin = min(state.gap_left, state.gap_right, TWO_PI - state.gap_left, TWO_PI - state.gap_right)
    return min(params.step, max(params.adaptive_c * margin * margin, params.dt_floor))


@dataclass
class RadialDriverPath:
    """Substep record of (t, W, V_L, V_R), kept only when asked for."""

    t: list[float] = field(default_factory=list)
    w: list[float] = field(default_factory=list)
    v_left: list[float] = field(default_factory=list)
    v_right: list[float] = field(default_factory=list)
    threshold_time: float | None = None

    def record(self, state: RadialDriverState) -> None:
        self.t.append(state.time)
        self.w.append(state.w)
        self.v_left.append(state.v_left)
        self.v_right.append(state.v_right)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.t, "w": self.w, "v_left": self.v_left, "v_right": self.v_right})

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


class SlitMerger:
    """Groups driver substeps into slits.

    A slit closes once `step` capacity has accumulated or the driver has moved by
    `max_angle`; it carries the driver angle at its start.
    """

    def __init__(self, angle: float, step: float, max_angle: float):
        self.angle = angle
        self.threshold = step * (1 - SLIT_RTOL)
        self.max_angle = max_angle
        self.pending = 0.0
        self.durations: list[float] = []
        self.angles: list[float] = []

    def add(self, dt: float, w: float) -> None:
        self.pending += dt
        if self.pending >= self.threshold or abs(w - self.angle) > self.max_angle:
            self.durations.append(self.pending)
            self.angles.append(self.angle)
            self.pending, self.angle = 0.0, w

    def chain(self) -> LoewnerChain:
        durations, angles = list(self.durations), list(self.angles)
        if self.pending > 0:
            durations.append(self.pending)
            angles.append(self.angle)
        return LoewnerChain(np.array(durations), np.array(angles))


def slit_chain(times, angles, step: float, max_angle: float = DEFAULT_PARAMS.max_slit_angle) -> LoewnerChain:
    """Loewner chain of a driving function sampled at increasing `times`, with slits of about `step` capacity."""
    times = np.asarray(times, dtype=float)
    angles = np.asarray(angles, dtype=float)
    if times.size < 2 or times.shape != angles.shape:
        raise ValueError("a driving function needs at least two samples and one angle per time")
    merger = SlitMerger(float(angles[0]), step, max_angle)
    for dt, w in zip(np.diff(times).tolist(), angles[1:].tolist()):
        merger.add(dt, w)
    return merger.chain()


def trace_stability(path: RadialDriverPath, step: float, params: EngineParams = DEFAULT_PARAMS) -> float:
    """Hausdorff distance between the traces of one driving function slit at `step` and at `step / 2`.

    Both traces are sampled at the same capacities, `params.loop_resolution` of them.
    """
    coarse = slit_chain(path.t, path.w, step, params.max_slit_angle)
    fine = slit_chain(path.t, path.w, step / 2, params.max_slit_angle)
    capacities = np.linspace(0.0, coarse.total_capacity, params.loop_resolution)
    return conformal.hausdorff_distance(trace_at(coarse, capacities), trace_at(fine, capacities))


@dataclass(frozen=True)
class ThresholdRun:
    chain: LoewnerChain
    threshold_time: float
    state: RadialDriverState
    seed_angle: float
    substeps: int
    path: RadialDriverPath | None = None

    def __iter__(self):
        yield self.chain
        yield self.threshold_time

    @property
    def right_dominant(self) -> bool:
        return self.state.gap_right > self.state.gap_left


def run_to_threshold(
    weights: SleWeights,
    seed_angle: float = 0.0,
    rng_stream: StreamId | None = None,
    step: float | None = None,
    *,
    params: EngineParams = DEFAULT_PARAMS,
    mirror: bool = False,
    record_path: bool = False,
) -> ThresholdRun:
    """Integrate the driver until the continuation threshold and emit its Loewner chain.

    Substeps are merged into one slit until `step` capacity has accumulated or the
    driver has moved by `max_slit_angle`; each slit uses the driver angle at its start.
    """
    if rng_stream is None:
        raise ValueError("run_to_threshold needs an rng stream")
    if step is not None:
        params = params.with_step(step)
    noise = GaussianBlocks(rng_stream, negate=mirror)
    floor = params.delta_touch
    state = RadialDriverState(float(seed_angle), floor, floor, 0.0)
    path = RadialDriverPath() if record_path else None
    if path is not None:
        path.record(state)

    slits = SlitMerger(state.w, params.step, params.max_slit_angle)
    substeps = 0
    while state.spread >= params.delta_merge:
        if state.time > params.hard_cap:
            logger.warning(f"driver exceeded capacity cap {params.hard_cap} with weights {weights}")
            raise ThresholdNotReached(state.time, params.hard_cap)
        dt = adaptive_dt(state, params)
        state = touch_and_reflect(state, weights, dt, math.sqrt(dt) * noise.next(), floor)
        substeps += 1
        slits.add(dt, state.w)
        if path is not None:
            path.record(state)

    chain = slits.chain()
    if path is not None:
        path.threshold_time = chain.total_capacity
    logger.debug(f"threshold after {substeps} substeps, {len(chain)} slits, capacity {chain.total_capacity:.4f}")
    return ThresholdRun(chain, chain.total_capacity, state, float(seed_angle), substeps, path)
