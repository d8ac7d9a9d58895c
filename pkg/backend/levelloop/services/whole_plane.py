"""Exploration from the small circle of radius epsilon towards infinity.

The exterior of epsilon*U is mapped to the unit disk by w = epsilon / z and explored
there towards 0 with the ordinary sequence engine. For a loop with disk log CR index
t_d, -log CR(ext; inf) (with CR(C minus epsilon*U; inf) = 1/epsilon) is log(epsilon) + t_d.
Inversion reverses winding about the origin, so plane orientations are the flipped
disk orientations.
"""

import logging
import math
from dataclasses import dataclass
from functools import cached_property, partial

import numpy as np

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import SampleTooSmall
from levelloop.schemas import McReport
from levelloop.services import statistics
from levelloop.services.loewner import Orientation, OrientedLoop
from levelloop.services.rng import StreamId
from levelloop.services.sequences import LoopSequence, alternating_sequence
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import parallel_replicas

logger = logging.getLogger(__name__)

WINDOW_MARGIN = 5.0


def invert(points, epsilon: float) -> np.ndarray:
    """z <-> epsilon / z; an involution."""
    return epsilon / np.asarray(points, dtype=complex)


@dataclass(frozen=True, eq=False)
class ExteriorLoop:
    loop: OrientedLoop
    epsilon: float
    index: int = 0

    @property
    def log_cr_infinity(self) -> float:
        return math.log(self.epsilon) + self.loop.log_cr

    @property
    def orientation(self) -> Orientation:
        return self.loop.orientation.flipped()

    @property
    def height_lambda(self):
        return self.loop.height_lambda

    @property
    def inverted_vertices(self) -> np.ndarray:
        return self.loop.vertices

    @cached_property
    def vertices(self) -> np.ndarray:
        return invert(self.loop.vertices, self.epsilon)

    @property
    def inradius(self) -> float:
        """Distance from the origin to the loop in the plane."""
        return self.epsilon / self.loop.outradius

    @property
    def outradius(self) -> float:
        return self.epsilon / self.loop.inradius


def _start_orientation(stream: StreamId) -> Orientation:
    coin = stream.generator().uniform()
    return Orientation.COUNTERCLOCKWISE if coin < 0.5 else Orientation.CLOCKWISE


def exterior_disk_sequence(
    epsilon: float,
    r,
    t_max: float,
    rng_stream: StreamId,
    *,
    start: Orientation | None = None,
    params: EngineParams = DEFAULT_PARAMS,
) -> LoopSequence:
    """Disk-frame sequence run one loop past index t_max."""
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not math.isfinite(t_max):
        raise ValueError("t_max must be finite")
    if start is None:
        start = _start_orientation(rng_stream.child(0))
    return alternating_sequence(
        r, 0j, None, rng_stream.child(1), start=start, max_log_cr=t_max - math.log(epsilon), params=params
    )


def exterior_sequence(
    epsilon: float,
    r,
    t_max: float,
    rng_stream: StreamId,
    *,
    start: Orientation | None = None,
    params: EngineParams = DEFAULT_PARAMS,
) -> list[ExteriorLoop]:
    """Loops with log_cr_infinity <= t_max, starting with the epsilon circle itself."""
    seq = exterior_disk_sequence(epsilon, r, t_max, rng_stream, start=start, params=params)
    loops = [ExteriorLoop(loop, epsilon, n) for n, loop in enumerate(seq.loops)]
    return [loop for loop in loops if loop.log_cr_infinity <= t_max]


def loop_at_index(loops: list[ExteriorLoop], t: float) -> ExteriorLoop:
    """Last loop whose index does not exceed t."""
    candidates = [loop for loop in loops if loop.log_cr_infinity <= t]
    if not candidates:
        raise ValueError(f"no loop with index <= {t}")
    return candidates[-1]


def bi_infinite_window(T: float, r, rng_stream: StreamId, *, params: EngineParams = DEFAULT_PARAMS) -> list[ExteriorLoop]:
    """Loops with index in [-T, T], started far enough inside to forget the start circle."""
    if not T > 0:
        raise ValueError("window half-width must be positive")
    epsilon = math.exp(-T - WINDOW_MARGIN)
    loops = exterior_sequence(epsilon, r, T, rng_stream, params=params)
    return [loop for loop in loops if -T <= loop.log_cr_infinity]


@dataclass(frozen=True)
class ZeroLoopSummary:
    orientation: str
    inradius: float
    outradius: float
    log_cr_infinity: float
    height_step: float


def zero_loop_summary(epsilon: float, r, rng_stream: StreamId, params: EngineParams = DEFAULT_PARAMS) -> ZeroLoopSummary:
    loops = exterior_sequence(epsilon, r, 0.0, rng_stream, params=params)
    zero = loops[-1]
    step = float(zero.height_lambda - loops[-2].height_lambda) if len(loops) > 1 else 0.0
    return ZeroLoopSummary(zero.orientation.value, zero.inradius, zero.outradius, zero.log_cr_infinity, step)


def _scale_pair(stream: StreamId, delta1: float, delta2: float, r, params: EngineParams):
    return zero_loop_summary(delta1, r, stream.child(1), params), zero_loop_summary(delta2, r, stream.child(2), params)


def _compare(report: ReportBuilder, first: list[ZeroLoopSummary], second: list[ZeroLoopSummary]) -> float:
    """Record the KS comparisons of L_0 statistics; returns the largest KS distance."""
    largest = 0.0
    for name in ("inradius", "outradius", "log_cr_infinity"):
        a = [getattr(s, name) for s in first]
        b = [getattr(s, name) for s in second]
        report.ks_two_sample(f"ks_{name}", a, b, hard=False, alpha=0.05)
        try:
            largest = max(largest, statistics.ks_test(a, "empirical", reference=b).statistic)
        except SampleTooSmall:
            pass
    for label, sample in (("delta1", first), ("delta2", second)):
        clockwise = sum(1 for s in sample if s.orientation == Orientation.CLOCKWISE.value)
        up = sum(1 for s in sample if s.height_step > 0)
        report.proportion(f"clockwise_{label}", clockwise, len(sample))
        report.proportion(f"step_up_{label}", up, len(sample))
    if first and second:
        p1 = sum(s.orientation == Orientation.CLOCKWISE.value for s in first) / len(first)
        p2 = sum(s.orientation == Orientation.CLOCKWISE.value for s in second) / len(second)
        pooled = (p1 * len(first) + p2 * len(second)) / (len(first) + len(second))
        sd = math.sqrt(max(pooled * (1 - pooled), 1e-12) * (1 / len(first) + 1 / len(second)))
        z = (p1 - p2) / sd
        report.gate("orientation_stable", z, abs(z) <= statistics.GATE_SIGMAS, hard=False)
    return largest


def epsilon_convergence_report(
    delta1: float,
    delta2: float,
    n_runs: int,
    rng_stream: StreamId,
    *,
    r=0.5,
    params: EngineParams = DEFAULT_PARAMS,
    workers: int = 1,
) -> McReport:
    """Compare the law of L_0 between start scales delta1 and delta2."""
    if not 0 < delta2 <= delta1 < 1:
        raise ValueError(f"need 0 < delta2 <= delta1 < 1, got {delta1}, {delta2}")
    replica = partial(_scale_pair, delta1=delta1, delta2=delta2, r=r, params=params)
    outcomes = parallel_replicas(replica, rng_stream, n_runs, workers=workers)
    pairs = [o.value for o in outcomes if o.ok]
    report = ReportBuilder("whole_plane.epsilon_convergence", "the loop at index 0 converges in law as epsilon -> 0")
    largest = _compare(report, [a for a, _ in pairs], [b for _, b in pairs])
    report.value("max_ks_distance", largest)
    for q in (0.25, 0.5, 0.75):
        for label, index in (("delta1", 0), ("delta2", 1)):
            values = [pair[index].inradius for pair in pairs]
            if values:
                report.value(f"inradius_q{int(q * 100)}_{label}", float(np.quantile(values, q)))
    report.failures(outcomes)
    report.param("delta1", delta1)
    report.param("delta2", delta2)
    report.param("r", float(r))
    return report.build(rng_stream, n_runs, params)


def convergence_trend(
    deltas, n_runs: int, rng_stream: StreamId, *, r=0.5, params: EngineParams = DEFAULT_PARAMS, workers: int = 1
) -> McReport:
    """KS(delta, delta/2) over decreasing delta and its fitted log-log decay exponent."""
    deltas = sorted((float(d) for d in deltas), reverse=True)
    distances = []
    for i, delta in enumerate(deltas):
        sub = epsilon_convergence_report(delta, delta / 2, n_runs, rng_stream.child(i), r=r, params=params, workers=workers)
        distances.append(sub.estimates["max_ks_distance"].value)
    report = ReportBuilder("whole_plane.convergence_trend", "KS(delta, delta/2) decreases as delta -> 0")
    for delta, d in zip(deltas, distances):
        report.value(f"ks_delta_{delta:g}", d)
    noise = 1.36 * math.sqrt(2.0 / n_runs)
    monotone = all(b <= a + noise for a, b in zip(distances, distances[1:]))
    report.gate("nonincreasing_within_noise", float(monotone), monotone)
    slope, constant = statistics.loglog_slope(deltas, distances)
    report.value("fitted_exponent", slope)
    report.value("fitted_constant", constant)
    report.param("noise_allowance", noise)
    return report.build(rng_stream, n_runs, params)


def _outward_replica(stream: StreamId, epsilon: float, r, t: float, params: EngineParams) -> float:
    return loop_at_index(exterior_sequence(epsilon, r, t, stream, params=params), t).inradius


def _inward_replica(stream: StreamId, r, n: int, params: EngineParams) -> float:
    seq = alternating_sequence(r, 0j, n, stream, params=params)
    return seq.loops[n].outradius / seq.loops[0].outradius


def transience_report(
    n_runs: int,
    rng_stream: StreamId,
    *,
    r=0.5,
    n_inward: int = 40,
    t_outward: float = 3.0,
    epsilon: float = math.exp(-1.0),
    params: EngineParams = DEFAULT_PARAMS,
    workers: int = 1,
) -> McReport:
    """Loops shrink to the target inward and escape to infinity outward."""
    inward = parallel_replicas(
        partial(_inward_replica, r=r, n=n_inward, params=params), rng_stream.child(1), n_runs, workers=workers
    )
    outward = parallel_replicas(
        partial(_outward_replica, epsilon=epsilon, r=r, t=t_outward, params=params),
        rng_stream.child(2),
        n_runs,
        workers=workers,
    )
    ratios = np.array([o.value for o in inward if o.ok])
    radii = np.array([o.value for o in outward if o.ok])
    report = ReportBuilder("whole_plane.transience", "sequences converge to the target and escape to infinity")
    if ratios.size:
        median = float(np.median(ratios))
        report.value("median_outradius_ratio", median)
        report.gate("inward_shrinks", median, median < 0.5)
    if radii.size:
        median = float(np.median(radii))
        report.value("median_inradius_outward", median)
        report.gate("outward_escapes", median, median > math.exp(t_outward - 1))
        bound = int(np.count_nonzero(radii > math.exp(t_outward) * (1 + 1e-9)))
        report.gate("koebe_inradius_bound", bound, bound == 0)
    report.failures(inward + outward)
    report.param("r", float(r))
    report.param("n_inward", n_inward)
    report.param("t_outward", t_outward)
    return report.build(rng_stream, n_runs, params)
