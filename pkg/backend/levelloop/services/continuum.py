"""Dyadic refinement towers and diagnostics of the continuum exploration.

A tower holds upward sequences at r = 2^-k for k_min..k_max whose even-indexed loops
coincide across adjacent levels. The transition time of level k is
tau^(k) = 2^(-k-1) N^k and the loop at time u is L^k_n with 2^(-k-1) n < u <= 2^(-k-1)(n+1).
"""

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, partial

import numpy as np

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import SampleTooSmall
from levelloop.schemas import McReport, TowerRecord
from levelloop.services import conformal, statistics
from levelloop.services.loewner import Orientation, OrientedLoop, caratheodory_distance
from levelloop.services.rng import StreamId
from levelloop.services.sequences import (
    LoopSequence,
    alternating_sequence,
    coarsen_sequence,
    refine_sequence,
    upward_sequence,
)
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import parallel_replicas

logger = logging.getLogger(__name__)

MAX_LEVEL = 8
MAX_GENERATIONS = 5
DOOB_LEVEL = 0.1
JUMP_FLOOR_FACTOR = 10


@dataclass(frozen=True, eq=False)
class RefinementTower:
    k_min: int
    levels: tuple[LoopSequence, ...]
    method: str = "coarsen"

    @property
    def k_max(self) -> int:
        return self.k_min + len(self.levels) - 1

    @property
    def ks(self) -> range:
        return range(self.k_min, self.k_max + 1)

    def level(self, k: int) -> LoopSequence:
        if k not in self.ks:
            raise ValueError(f"level {k} outside [{self.k_min}, {self.k_max}]")
        return self.levels[k - self.k_min]

    @property
    def N(self) -> tuple[int, ...]:
        return tuple(seq.N for seq in self.levels)

    @cached_property
    def tau_exact(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(n, 2 ** (k + 1)) for k, n in zip(self.ks, self.N))

    @property
    def tau(self) -> tuple[float, ...]:
        return tuple(float(t) for t in self.tau_exact)

    def sandwich_violations(self) -> list[str]:
        problems = []
        for k in self.ks[:-1]:
            gap = self.tau_exact[k - self.k_min] - self.tau_exact[k + 1 - self.k_min]
            if not 0 <= gap <= Fraction(1, 2 ** (k + 2)):
                problems.append(f"tau({k}) - tau({k + 1}) = {gap}")
        return problems

    def identity_violations(self) -> list[str]:
        problems = []
        for k in self.ks[:-1]:
            coarse, fine = self.level(k), self.level(k + 1)
            for n in range(coarse.N):
                if fine.loops[2 * n] is not coarse.loops[n]:
                    problems.append(f"level {k} loop {n} is not level {k + 1} loop {2 * n}")
        return problems

    def index_at(self, k: int, u: float) -> int:
        seq = self.level(k)
        if u <= 0:
            return 0
        return min(math.ceil(u * 2 ** (k + 1)) - 1, seq.N)

    def loop_at(self, k: int, u: float) -> OrientedLoop:
        return self.level(k).loops[self.index_at(k, u)]

    def log_cr_at(self, k: int, u: float) -> float:
        return self.loop_at(k, u).log_cr

    def to_record(self) -> TowerRecord:
        return TowerRecord(
            k=list(self.ks),
            N=list(self.N),
            tau=list(self.tau),
            log_cr=[list(seq.log_cr_index) for seq in self.levels],
        )


def build_tower(
    k_min: int,
    k_max: int,
    target: complex = 0j,
    rng_stream: StreamId | None = None,
    *,
    method: str = "coarsen",
    params: EngineParams = DEFAULT_PARAMS,
) -> RefinementTower:
    """Tower of upward sequences at r = 2^-k.

    "coarsen" simulates level k_max directly and coarsens it level by level, so
    tau^(k_max) follows the exact scaled geometric law. "refine" simulates level k_min
    and refines upward.
    """
    if not 1 <= k_min < k_max <= MAX_LEVEL:
        raise ValueError(f"need 1 <= k_min < k_max <= {MAX_LEVEL}, got {k_min}, {k_max}")
    if rng_stream is None:
        raise ValueError("build_tower needs an rng stream")
    if method == "coarsen":
        levels = [upward_sequence(Fraction(1, 2**k_max), target, rng_stream.child(0), params=params)]
        for _ in range(k_max - k_min):
            levels.insert(0, coarsen_sequence(levels[0]))
    elif method == "refine":
        levels = [upward_sequence(Fraction(1, 2**k_min), target, rng_stream.child(0), params=params)]
        for k in range(k_min + 1, k_max + 1):
            levels.append(refine_sequence(levels[-1], rng_stream.child(k), params=params))
    else:
        raise ValueError(f"unknown tower method {method!r}")
    tower = RefinementTower(k_min, tuple(levels), method)
    logger.debug(f"tower N = {tower.N}")
    return tower


def _as_towers(towers) -> list[RefinementTower]:
    return [towers] if isinstance(towers, RefinementTower) else list(towers)


def _tower_replica(stream: StreamId, k_min: int, k_max: int, target: complex, method: str, params: EngineParams):
    return build_tower(k_min, k_max, target, stream, method=method, params=params)


def sample_towers(
    k_min: int,
    k_max: int,
    n_runs: int,
    rng_stream: StreamId,
    *,
    target: complex = 0j,
    method: str = "coarsen",
    params: EngineParams = DEFAULT_PARAMS,
    workers: int = 1,
):
    replica = partial(_tower_replica, k_min=k_min, k_max=k_max, target=target, method=method, params=params)
    return parallel_replicas(replica, rng_stream, n_runs, workers=workers)


def tower_report(outcomes, rng_stream: StreamId, *, params: EngineParams = DEFAULT_PARAMS) -> McReport:
    """Sandwich, loop identity and the exponential law of the finest transition time."""
    towers = [o.value for o in outcomes if o.ok]
    report = ReportBuilder("refinement.tower", "0 <= tau(k) - tau(k+1) <= 2^(-k-2); tau(k) converges to Exp(1)")
    sandwich = sum(len(t.sandwich_violations()) for t in towers)
    identity = sum(len(t.identity_violations()) for t in towers)
    report.gate("sandwich_violations", sandwich, sandwich == 0)
    report.gate("identity_violations", identity, identity == 0)
    if towers:
        k_max = towers[0].k_max
        p = 2.0 ** (-k_max - 1)
        finest = np.array([t.tau[-1] for t in towers])
        report.estimate("tau_finest_mean", finest)
        report.binomial("P_tau_gt_1", int(np.count_nonzero(finest > 1)), finest.size, math.exp(-1))
        bound = statistics.geometric_exp1_distance(p, p)
        report.value("exact_geometric_exp1_distance", bound)
        try:
            ks = statistics.ks_test(finest, "exp1")
            report.gate("ks_exp1_distance", ks.statistic, ks.statistic < 0.03, p_value=ks.p_value)
        except SampleTooSmall as e:
            report.note(str(e))
        report.ks("ks_scaled_geometric", finest, "geometric", p=p, scale=p)
        for k in towers[0].ks:
            report.estimate(f"tau_{k}_mean", [t.tau[k - t.k_min] for t in towers])
        report.param("k_min", towers[0].k_min)
        report.param("k_max", k_max)
        report.param("method", towers[0].method)
    report.failures(outcomes)
    return report.build(rng_stream, len(outcomes), params)


def martingale_increments(tower: RefinementTower, u_grid) -> np.ndarray:
    """M_u^(n) = log CR index at level k_max minus that at level n, shape (levels - 1, grid)."""
    grid = np.asarray(u_grid, dtype=float)
    finest = np.array([tower.log_cr_at(tower.k_max, u) for u in grid])
    return np.array([finest - np.array([tower.log_cr_at(k, u) for u in grid]) for k in tower.ks[:-1]])


def conformal_radius_martingale_check(
    towers, u_grid, *, rng_stream: StreamId | None = None, params: EngineParams = DEFAULT_PARAMS
) -> McReport:
    """Decay of E[M_u] across levels and the Doob-type tail of sup_u M_u."""
    towers = _as_towers(towers)
    if not towers or len(towers[0].levels) < 3:
        raise ValueError("the martingale check needs towers with at least 3 levels")
    grid = np.asarray(u_grid, dtype=float)
    stack = np.array([martingale_increments(t, grid) for t in towers])
    report = ReportBuilder("continuum.cr_martingale", "E[M_u] <= C 2^-n with a Doob maximal bound")
    negative = int(np.count_nonzero(stack < -1e-12))
    report.gate("M_nonnegative", negative, negative == 0)

    ks = list(towers[0].ks)
    adjacent = np.array(
        [[[t.log_cr_at(k + 1, u) - t.log_cr_at(k, u) for u in grid] for k in ks[:-1]] for t in towers]
    )
    mean_adjacent = adjacent.mean(axis=0)
    ratios = []
    for i in range(len(ks) - 2):
        with np.errstate(divide="ignore", invalid="ignore"):
            row = mean_adjacent[i] / mean_adjacent[i + 1]
        ratios.extend(row[np.isfinite(row)].tolist())
    ratio = float(np.mean(ratios)) if ratios else float("nan")
    report.value("decay_ratio", ratio)
    report.gate("decay_ratio_band", ratio, 1.6 <= ratio <= 2.4)

    levels = np.array(ks[:-1], dtype=float)
    mean_m = stack.mean(axis=(0, 2))
    slope, _ = statistics.loglog_slope(2.0**-levels, mean_m)
    constant = float(np.max(mean_m * 2.0**levels)) if mean_m.size else float("nan")
    report.value("decay_exponent", slope)
    report.value("fitted_C", constant)
    report.gate("decay_exponent_floor", slope, slope >= 0.9)
    for i, k in enumerate(ks[:-1]):
        report.estimate(f"M_level_{k}", stack[:, i, :].mean(axis=1))
        sup = stack[:, i, :].max(axis=1)
        tail = float(np.mean(sup >= DOOB_LEVEL))
        report.value(f"P_sup_M_ge_{DOOB_LEVEL}_level_{k}", tail)
        report.value(f"doob_bound_level_{k}", constant / DOOB_LEVEL * 2.0**-k)
    report.param("u_grid", ",".join(f"{u:g}" for u in grid))
    return report.build(rng_stream or StreamId(0), len(towers), params)


def cadlag_diagnostics(
    towers, *, h_ladder=None, u_grid=None, rng_stream: StreamId | None = None, params: EngineParams = DEFAULT_PARAMS
) -> McReport:
    """Right-continuity of u -> L_u on the finest level and the jump at the transition time."""
    towers = _as_towers(towers)
    report = ReportBuilder("continuum.cadlag", "u -> L_u is right-continuous with a jump at the transition time")
    floor = JUMP_FLOOR_FACTOR * params.trace_tol
    identical, identical_nonzero = 0, 0
    jumps, big_jumps = 0, 0
    ladder_means = []
    for tower in towers:
        k = tower.k_max
        seq = tower.level(k)
        spacing = 2.0 ** (-k - 1)
        ladder = np.asarray(h_ladder if h_ladder is not None else spacing * 2.0 ** np.arange(3, -1, -1))
        grid = np.asarray(u_grid if u_grid is not None else spacing * (np.arange(1, seq.N, max(seq.N // 4, 1)) + 0.25))
        row = []
        for h in ladder:
            distances = []
            for u in grid:
                if u + h >= tower.tau[-1]:
                    continue
                a, b = tower.loop_at(k, u), tower.loop_at(k, u + h)
                d = caratheodory_distance(a, b)
                if a is b:
                    identical += 1
                    identical_nonzero += d != 0
                distances.append(d)
            row.append(float(np.mean(distances)) if distances else float("nan"))
        ladder_means.append(row)
        if seq.N >= 2:
            jumps += 1
            big_jumps += caratheodory_distance(seq.loops[seq.N - 1], seq.loops[seq.N]) > floor
    report.gate("same_loop_distance_zero", identical_nonzero, identical_nonzero == 0)
    report.value("same_loop_pairs", identical)
    if jumps:
        report.proportion("jump_above_floor", big_jumps, jumps)
        report.gate("jump_fraction", big_jumps / jumps, big_jumps / jumps > 0.99, hard=False)
    means = np.nanmean(np.array(ladder_means, dtype=float), axis=0) if ladder_means else np.array([])
    for i, m in enumerate(means):
        report.value(f"mean_distance_h{i}", m)
    monotone = bool(np.all(np.diff(means[np.isfinite(means)]) <= 1e-12)) if means.size else True
    report.gate("distance_nonincreasing_in_h", float(monotone), monotone, hard=False)
    report.param("jump_floor", floor)
    return report.build(rng_stream or StreamId(0), len(towers), params)


def _generation_replica(
    stream: StreamId, n_generations: int, target: complex, k: int, start: Orientation, params: EngineParams
):
    seq = alternating_sequence(
        Fraction(1, 2**k), target, None, stream, start=start, n_blocks=n_generations, params=params
    )
    blocks = list(seq.block_lengths)
    marks = seq.transition_indices
    log_cr = np.diff([seq.loops[0].log_cr] + [seq.loops[m].log_cr for m in marks]).tolist()
    first = seq.loops[marks[0]] if marks else None
    simple = first is not None and conformal.self_crossings(first.vertices) == 0
    clockwise = first is not None and first.orientation is Orientation.CLOCKWISE
    return blocks, log_cr, simple, clockwise


def nested_cle_statistics(
    n_generations: int,
    target: complex = 0j,
    rng_stream: StreamId | None = None,
    *,
    n_runs: int = 200,
    k: int = 6,
    start: Orientation = Orientation.COUNTERCLOCKWISE,
    params: EngineParams = DEFAULT_PARAMS,
    workers: int = 1,
) -> McReport:
    """Transition loops of the alternating exploration at r = 2^-k as nested loop generations."""
    if not 1 <= n_generations <= MAX_GENERATIONS:
        raise ValueError(f"n_generations must lie in [1, {MAX_GENERATIONS}]")
    if rng_stream is None:
        raise ValueError("nested_cle_statistics needs an rng stream")
    replica = partial(_generation_replica, n_generations=n_generations, target=target, k=k, start=start, params=params)
    outcomes = parallel_replicas(replica, rng_stream, n_runs, workers=workers)
    runs = [o.value for o in outcomes if o.ok]
    scale = 2.0 ** (-k - 1)

    report = ReportBuilder("continuum.nested_cle", "transition times are i.i.d. Exp(1); transition loops form nested CLE_4")
    increments = [np.array(blocks, dtype=float) * scale for blocks, *_ in runs]
    pooled = np.concatenate(increments) if increments else np.array([])
    report.estimate("tau_increment_mean", pooled)
    report.ks("tau_increment_exp1", pooled, "exp1")
    first = np.array([inc[0] for inc in increments if inc.size])
    report.binomial("P_tau1_gt_1", int(np.count_nonzero(first > 1)), first.size, math.exp(-1))

    if sum(inc.size - 1 for inc in increments if inc.size) >= 2:
        rho, z = statistics.lag1_correlation(*increments)
        report.value("lag1_correlation", rho)
        report.gate("lag1_correlation_band", z, abs(z) <= statistics.GATE_SIGMAS)
    if pooled.size > 2:
        z, p = statistics.runs_test(np.concatenate(increments))
        report.gate("runs_test", z, p > 0.05, p_value=p, hard=False)

    if n_generations >= 3:
        gen1 = [log_cr[0] for _, log_cr, *_ in runs if len(log_cr) >= 3]
        gen3 = [log_cr[2] for _, log_cr, *_ in runs if len(log_cr) >= 3]
        report.ks_two_sample("log_cr_increment_gen1_vs_gen3", gen1, gen3)
    if n_generations >= 2:
        odd = [b for blocks, *_ in runs for b in blocks[0::2]]
        even = [b for blocks, *_ in runs for b in blocks[1::2]]
        report.ks_two_sample("upward_downward_duality", odd, even, hard=False)

    first_cr = np.array([log_cr[0] for _, log_cr, *_ in runs if log_cr])
    for q in (0.1, 0.5, 0.9):
        if first_cr.size:
            report.value(f"log_cr_tau1_q{int(q * 100)}", float(np.quantile(first_cr, q)))
    simple = sum(1 for *_, s, _ in runs if s)
    clockwise = sum(1 for *_, c in runs if c)
    if runs:
        report.proportion("first_generation_simple", simple, len(runs))
        report.gate("first_generation_simple", simple / len(runs), simple == len(runs), hard=False)
        flips = clockwise if start is Orientation.COUNTERCLOCKWISE else len(runs) - clockwise
        report.gate("first_generation_flipped", flips / len(runs), flips == len(runs))
    report.failures(outcomes)
    report.param("k", k)
    report.param("n_generations", n_generations)
    return report.build(rng_stream, n_runs, params)


def _oracle_replica(stream: StreamId, r: Fraction, target: complex, params: EngineParams):
    coarse = upward_sequence(r, target, stream.child(0), params=params)
    refined = refine_sequence(coarse, stream.child(1), params=params)
    direct = upward_sequence(r / 2, target, stream.child(2), params=params)
    return (refined.N, refined.final_loop.log_cr), (direct.N, direct.final_loop.log_cr)


def refinement_oracle_experiment(
    r,
    n_runs: int,
    rng_stream: StreamId,
    *,
    target: complex = 0j,
    params: EngineParams = DEFAULT_PARAMS,
    workers: int = 1,
) -> McReport:
    """(N, final log CR) of refined sequences against sequences simulated directly at r/2."""
    replica = partial(_oracle_replica, r=Fraction(str(r)), target=target, params=params)
    outcomes = parallel_replicas(replica, rng_stream, n_runs, workers=workers)
    pairs = [o.value for o in outcomes if o.ok]
    refined_n = np.array([a[0] for a, _ in pairs], dtype=float)
    direct_n = np.array([b[0] for _, b in pairs], dtype=float)
    report = ReportBuilder("refinement.oracle", "refining at r matches direct simulation at r/2")
    report.estimate("refined_N_mean", refined_n)
    report.estimate("direct_N_mean", direct_n)
    report.ks_two_sample("N_law", refined_n, direct_n)
    report.ks_two_sample("final_log_cr_law", [a[1] for a, _ in pairs], [b[1] for _, b in pairs])
    report.failures(outcomes)
    report.param("r", float(r))
    return report.build(rng_stream, n_runs, params)
