"""Height-varying sequences of level loops.

Each loop is simulated in the unit disk and pulled back through the uniformizer of the
previous loop's interior, so every SDE run happens in the same canonical domain.
Heights and boundary values are exact fractions.

Index 0 of every sequence is the starting boundary: the unit circle, counterclockwise
at height -1 for upward starts and clockwise at height +1 for downward starts.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from functools import partial
from typing import Callable

import numpy as np

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import SequenceError, SwallowedPoint, TargetsTooClose
from levelloop.schemas import McReport
from levelloop.services import conformal
from levelloop.services.level_loops import (
    BoundaryLedger,
    Side,
    as_fraction,
    close_level_loop,
    effective_height,
)
from levelloop.services.loewner import (
    LoewnerChain,
    Orientation,
    OrientedLoop,
    Uniformizer,
    apply_chain,
    inverse_chain,
    to_target_frame,
)
from levelloop.services.rng import StreamId
from levelloop.services.sle_driver import run_to_threshold, weights_from_height
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import parallel_replicas

logger = logging.getLogger(__name__)

TRANSITION_CAP_FACTOR = 200
TARGET_INDEPENDENCE_ANCHOR = "targeted sequences toward two points agree in law until they separate"


class SequenceKind(str, Enum):
    UPWARD = "upward"
    DOWNWARD = "downward"
    ALTERNATING = "alternating"


@dataclass(frozen=True, eq=False)
class LoopSequence:
    loops: tuple[OrientedLoop, ...]
    r: Fraction
    kind: SequenceKind
    transition_indices: tuple[int, ...]
    target: complex = 0j

    @property
    def N(self) -> int:
        """Index of the last loop."""
        return len(self.loops) - 1

    @property
    def final_loop(self) -> OrientedLoop:
        return self.loops[-1]

    @property
    def heights(self) -> tuple[Fraction, ...]:
        return tuple(as_fraction(loop.height_lambda) for loop in self.loops)

    @property
    def orientations(self) -> tuple[Orientation, ...]:
        return tuple(loop.orientation for loop in self.loops)

    @property
    def ledgers(self) -> tuple[BoundaryLedger, ...]:
        return tuple(BoundaryLedger.for_height(h) for h in self.heights)

    @property
    def interior_values(self) -> tuple[Fraction, ...]:
        return tuple(ledger.interior_value(loop.orientation) for ledger, loop in zip(self.ledgers, self.loops))

    @property
    def log_cr_index(self) -> tuple[float, ...]:
        return tuple(loop.log_cr for loop in self.loops)

    @property
    def block_lengths(self) -> tuple[int, ...]:
        marks = (0,) + self.transition_indices
        return tuple(b - a for a, b in zip(marks, marks[1:]))


def canonical_trace(frame: Uniformizer, loop: OrientedLoop) -> np.ndarray:
    """`loop` drawn in the canonical disk of `frame`; the loop's uniformizer must extend it."""
    chain = loop.uniformizer.relative_to(frame)
    circle = (1 - loop.inset) * np.exp(1j * loop.boundary_angles)
    return conformal.close_polyline(inverse_chain(chain, circle))


def _surrounds(outer: np.ndarray, inner: np.ndarray, tol: float) -> bool:
    return all(conformal.contains(outer, z) or conformal.distance_to_polyline(outer, z) <= tol for z in inner)


def _check_r(r) -> Fraction:
    r = as_fraction(r)
    if not 0 < r < 1:
        raise ValueError(f"height difference r must lie in (0, 1), got {r}")
    return r


def _check_target(target: complex) -> complex:
    if not abs(target) < 1:
        raise ValueError(f"target {target} is not in the open unit disk")
    return complex(target)


class SequenceBuilder:
    """Grows a sequence one loop at a time from the unit circle."""

    def __init__(
        self,
        r,
        target: complex,
        rng_stream: StreamId,
        start: Orientation = Orientation.COUNTERCLOCKWISE,
        params: EngineParams = DEFAULT_PARAMS,
        mirror: bool = False,
    ):
        if rng_stream is None:
            raise ValueError("sequences need an rng stream")
        self.r = _check_r(r)
        self.target = _check_target(target)
        self.stream = rng_stream
        self.params = params
        self.mirror = mirror
        start_height = Fraction(-1) if start is Orientation.COUNTERCLOCKWISE else Fraction(1)
        self.loops: list[OrientedLoop] = [OrientedLoop.unit_circle(start, start_height, self.target)]
        self.chains: list[LoewnerChain] = []
        self.transitions: list[int] = []

    @property
    def current(self) -> OrientedLoop:
        return self.loops[-1]

    def grow(self, direction: int) -> OrientedLoop:
        current = self.current
        requested = as_fraction(current.height_lambda) + direction * self.r
        ledger = BoundaryLedger.for_height(current.height_lambda)
        height = effective_height(requested, ledger, Side.of(current.orientation))
        n = len(self.loops)
        run = run_to_threshold(
            weights_from_height(height), 0.0, self.stream.child(n), params=self.params, mirror=self.mirror
        )
        loop = close_level_loop(run, requested, parent=current.uniformizer, params=self.params)
        self.loops.append(loop)
        self.chains.append(run.chain)
        return loop

    def build(self, kind: SequenceKind) -> LoopSequence:
        return LoopSequence(
            loops=tuple(self.loops),
            r=self.r,
            kind=kind,
            transition_indices=tuple(self.transitions),
            target=self.target,
        )


def _grow_block(builder: SequenceBuilder, direction: int, stop: Callable[[SequenceBuilder], bool] | None = None) -> bool:
    """Grow until the orientation flips; False if `stop` cut the block short."""
    closing = Orientation.CLOCKWISE if direction > 0 else Orientation.COUNTERCLOCKWISE
    cap = TRANSITION_CAP_FACTOR * math.ceil(1 / builder.r)
    for _ in range(cap):
        loop = builder.grow(direction)
        if loop.orientation is closing:
            builder.transitions.append(len(builder.loops) - 1)
            return True
        if stop is not None and stop(builder):
            return False
    raise SequenceError(f"no orientation flip within {cap} loops at r = {builder.r}")


def upward_sequence(
    r, target: complex = 0j, rng_stream: StreamId | None = None, *, params: EngineParams = DEFAULT_PARAMS
) -> LoopSequence:
    builder = SequenceBuilder(r, target, rng_stream, Orientation.COUNTERCLOCKWISE, params)
    _grow_block(builder, +1)
    return builder.build(SequenceKind.UPWARD)


def downward_sequence(
    r,
    target: complex = 0j,
    rng_stream: StreamId | None = None,
    *,
    params: EngineParams = DEFAULT_PARAMS,
    mirror: bool = False,
) -> LoopSequence:
    """Clockwise loops until the first counterclockwise one.

    With `mirror=True` the Gaussian stream is negated, which makes the run the exact
    reflection of `upward_sequence` on the same stream.
    """
    builder = SequenceBuilder(r, target, rng_stream, Orientation.CLOCKWISE, params, mirror=mirror)
    _grow_block(builder, -1)
    return builder.build(SequenceKind.DOWNWARD)


def alternating_sequence(
    r,
    target: complex = 0j,
    n_loops: int | None = None,
    rng_stream: StreamId | None = None,
    *,
    start: Orientation = Orientation.COUNTERCLOCKWISE,
    n_blocks: int | None = None,
    max_log_cr: float | None = None,
    stop: Callable[[SequenceBuilder], bool] | None = None,
    params: EngineParams = DEFAULT_PARAMS,
) -> LoopSequence:
    """Upward and downward blocks in turn, switching at every orientation flip.

    Growth stops at whichever comes first: `n_loops` loops, `n_blocks` finished blocks,
    a loop whose log CR index exceeds `max_log_cr` (that loop included), or `stop`.
    """
    if n_loops is not None and n_loops < 1:
        raise ValueError("n_loops must be at least 1")
    if n_loops is None and n_blocks is None and max_log_cr is None and stop is None:
        raise ValueError("alternating_sequence needs a stopping rule")
    builder = SequenceBuilder(r, target, rng_stream, start, params)
    direction = 1 if start is Orientation.COUNTERCLOCKWISE else -1

    def done(b: SequenceBuilder) -> bool:
        if n_loops is not None and len(b.loops) - 1 >= n_loops:
            return True
        if max_log_cr is not None and b.current.log_cr > max_log_cr:
            return True
        return stop is not None and stop(b)

    while True:
        finished = _grow_block(builder, direction, done)
        if not finished or done(builder):
            break
        if n_blocks is not None and len(builder.transitions) >= n_blocks:
            break
        direction = -direction
    return builder.build(SequenceKind.ALTERNATING)


def expected_interior_values(seq: LoopSequence) -> tuple[Fraction, ...]:
    """Interior boundary values predicted from the block lengths alone.

    With S the signed sum of finished blocks, loop k of an upward block has m = S - k r
    and its closing loop m = 2 + S - N r; a downward block mirrors this. A clockwise start
    negates everything.
    """
    r = seq.r
    sign = 1 if seq.loops[0].orientation is Orientation.COUNTERCLOCKWISE else -1
    values = [Fraction(0)]
    prefix = Fraction(0)
    upward = True
    lengths = list(seq.block_lengths)
    remainder = seq.N - sum(lengths)
    blocks = [(n, True) for n in lengths] + ([(remainder, False)] if remainder > 0 else [])
    for length, closes in blocks:
        for k in range(1, length + 1):
            last = closes and k == length
            if upward:
                m = 2 + prefix - k * r if last else prefix - k * r
            else:
                m = prefix + k * r if last else 2 + prefix + k * r
            values.append(sign * m)
        if closes:
            prefix = prefix - length * r if upward else prefix + length * r
            upward = not upward
    return tuple(values)


def block_sum(block_lengths, r) -> Fraction:
    """Signed sum of block lengths times r, upward blocks counted negatively."""
    r = as_fraction(r)
    return sum(((-1) ** j * n * r for j, n in enumerate(block_lengths, start=1)), Fraction(0))


def ledger_violations(seq: LoopSequence) -> list[str]:
    problems = []
    for n, (observed, expected) in enumerate(zip(seq.interior_values, expected_interior_values(seq))):
        if observed != expected:
            problems.append(f"loop {n}: interior value {observed} != {expected}")
    for n in range(1, seq.N + 1):
        if abs(seq.heights[n] - seq.heights[n - 1]) != seq.r:
            problems.append(f"loop {n}: height step {seq.heights[n] - seq.heights[n - 1]}")
    lengths = seq.block_lengths
    for k in range(2, len(lengths) + 1, 2):
        sign = 1 if seq.loops[0].orientation is Orientation.COUNTERCLOCKWISE else -1
        index = seq.transition_indices[k - 1]
        if seq.interior_values[index] != sign * block_sum(lengths[:k], seq.r):
            problems.append(f"block end {index}: {seq.interior_values[index]} != {sign * block_sum(lengths[:k], seq.r)}")
    return problems


def _inserted_loop(
    parent: OrientedLoop, child: OrientedLoop, height, rng_stream: StreamId, params: EngineParams, max_attempts: int
) -> OrientedLoop:
    """Counterclockwise level loop at `height` inside `parent` that surrounds `child`.

    Loops are sampled at the effective height read from the parent's ledger and
    rejected until one closes counterclockwise around the child trace, up to the
    boundary tolerance.
    """
    ledger = BoundaryLedger.for_height(parent.height_lambda)
    weights = weights_from_height(effective_height(height, ledger, Side.of(parent.orientation)))
    frame = parent.uniformizer.common_ancestor(child.uniformizer)
    inner = canonical_trace(frame, child)
    tol = 5 * params.trace_tol
    for attempt in range(max_attempts):
        run = run_to_threshold(weights, 0.0, rng_stream.child(attempt), params=params)
        loop = close_level_loop(run, height, parent=parent.uniformizer, params=params)
        if loop.orientation is not Orientation.COUNTERCLOCKWISE or not loop.log_cr < child.log_cr:
            continue
        if _surrounds(canonical_trace(frame, loop), inner, tol):
            logger.debug(f"inserted loop at height {height} after {attempt + 1} attempts")
            return loop
    raise SequenceError(f"no counterclockwise loop around the next loop in {max_attempts} attempts")


def refine_sequence(
    coarse: LoopSequence, rng_stream: StreamId, *, params: EngineParams = DEFAULT_PARAMS, max_attempts: int = 1000
) -> LoopSequence:
    """Half-step sequence at r/2 sharing every coarse loop at even indices.

    Between L_n and L_{n+1} a fresh counterclockwise level loop surrounding L_{n+1} is
    sampled inside L_n. At the last step the fine sequence ends at 2N - 1 with
    probability 4 / (8 - r), with a fresh clockwise loop inside L_N at effective height
    1 - r/2; otherwise it ends at 2N with L_N itself.
    """
    if coarse.kind is not SequenceKind.UPWARD:
        raise ValueError("only upward sequences can be refined")
    r = coarse.r
    fine_r = r / 2
    uniforms = rng_stream.child(0).generator()
    loops: list[OrientedLoop] = [coarse.loops[0]]
    N = coarse.N
    for n in range(N):
        inserted_height = Fraction(-1) + (2 * n + 1) * fine_r
        if n + 1 == N and uniforms.uniform() < float(Fraction(4) / (8 - r)):
            final = coarse.loops[N]
            for attempt in range(max_attempts):
                run = run_to_threshold(
                    weights_from_height(1 - fine_r), 0.0, rng_stream.child(1, attempt), params=params
                )
                loop = close_level_loop(run, inserted_height, parent=final.uniformizer, params=params)
                if loop.orientation is Orientation.CLOCKWISE:
                    break
            else:
                raise SequenceError(f"no clockwise loop in {max_attempts} attempts")
            loops.append(loop)
            continue
        parent, child = coarse.loops[n], coarse.loops[n + 1]
        loops.append(_inserted_loop(parent, child, inserted_height, rng_stream.child(2, n), params, max_attempts))
        loops.append(child)
    return LoopSequence(
        loops=tuple(loops),
        r=fine_r,
        kind=SequenceKind.UPWARD,
        transition_indices=(len(loops) - 1,),
        target=coarse.target,
    )


def coarsen_sequence(fine: LoopSequence) -> LoopSequence:
    """Sequence at 2r keeping the even-indexed fine loops; exact inverse of the refinement bookkeeping."""
    if fine.kind is not SequenceKind.UPWARD:
        raise ValueError("only upward sequences can be coarsened")
    coarse_r = 2 * fine.r
    if not coarse_r < 1:
        raise ValueError(f"coarsened difference {coarse_r} is not below 1")
    fine_n = fine.N
    N = (fine_n + 1) // 2
    loops = [fine.loops[2 * n] for n in range(N)]
    if fine_n % 2 == 0:
        loops.append(fine.loops[fine_n])
    else:
        loops.append(fine.loops[fine_n].relabel(Fraction(-1) + N * coarse_r))
    return LoopSequence(
        loops=tuple(loops),
        r=coarse_r,
        kind=SequenceKind.UPWARD,
        transition_indices=(N,),
        target=fine.target,
    )


class _Separation:
    """Tracks another point through a growing sequence until a loop cuts it off."""

    def __init__(self, point: complex, target: complex):
        self.zeta = complex(to_target_frame(point, target))
        self.index: int | None = None
        self.checked = 0

    def __call__(self, builder: SequenceBuilder) -> bool:
        n = len(builder.loops) - 1
        if self.index is not None or n == self.checked:
            return self.index is not None
        self.checked = n
        loop, chain = builder.loops[n], builder.chains[n - 1]
        circle = (1 - loop.inset) * np.exp(1j * loop.boundary_angles)
        if not conformal.contains(inverse_chain(chain, circle), self.zeta):
            self.index = n
            return True
        try:
            self.zeta = apply_chain(chain, self.zeta)
        except SwallowedPoint:
            self.index = n
            return True
        return False


def disconnection_run(
    r, target: complex, other: complex, rng_stream: StreamId, *, cap: int = 200, params: EngineParams = DEFAULT_PARAMS
) -> tuple[int | None, float | None]:
    """(M, log CR of L_M) for the first loop of a target-directed run that cuts off `other`."""
    tracker = _Separation(other, target)
    seq = alternating_sequence(r, target, cap, rng_stream, stop=tracker, params=params)
    if tracker.index is None:
        return None, None
    return tracker.index, seq.loops[tracker.index].log_cr


def _disconnection_pair(stream: StreamId, r, w1: complex, w2: complex, cap: int, params: EngineParams):
    return (
        disconnection_run(r, w1, w2, stream.child(1), cap=cap, params=params),
        disconnection_run(r, w2, w1, stream.child(2), cap=cap, params=params),
    )


def target_independence_experiment(
    r,
    w1: complex,
    w2: complex,
    n_runs: int,
    rng_stream: StreamId,
    *,
    cap: int = 200,
    params: EngineParams = DEFAULT_PARAMS,
    workers: int = 1,
) -> McReport:
    """Compare the disconnection index M and log CR at M between the two targetings."""
    if abs(w1 - w2) < 10 * params.trace_tol:
        raise TargetsTooClose(f"targets {w1} and {w2} are closer than {10 * params.trace_tol}")
    for w in (w1, w2):
        _check_target(w)

    replica = partial(_disconnection_pair, r=r, w1=w1, w2=w2, cap=cap, params=params)
    outcomes = parallel_replicas(replica, rng_stream, n_runs, workers=workers)
    pairs = [o.value for o in outcomes if o.ok]
    m1 = np.array([a[0] for a, _ in pairs if a[0] is not None], dtype=float)
    m2 = np.array([b[0] for _, b in pairs if b[0] is not None], dtype=float)
    cr1 = np.array([a[1] for a, _ in pairs if a[1] is not None], dtype=float)
    cr2 = np.array([b[1] for _, b in pairs if b[1] is not None], dtype=float)
    separated = m1.size + m2.size
    attempts = 2 * len(pairs)

    report = ReportBuilder("sequence_laws.target_independence", TARGET_INDEPENDENCE_ANCHOR)
    report.estimate("mean_M_w1", m1)
    report.estimate("mean_M_w2", m2)
    report.estimate("log_cr_at_M_w1", cr1)
    report.estimate("log_cr_at_M_w2", cr2)
    report.proportion("separated_within_cap", separated, attempts)
    report.ks_two_sample("M_law", m1, m2)
    report.ks_two_sample("log_cr_at_M_law", cr1, cr2, hard=False)
    report.gate("separation_within_cap", separated / max(attempts, 1), separated == attempts, hard=False)
    report.failures(outcomes)
    report.param("r", float(as_fraction(r)))
    report.param("cap", cap)
    return report.build(rng_stream, n_runs, params)
