"""Registry of Monte Carlo experiments, grouped into suites.

Each experiment owns a fixed registry index; its random stream is StreamId(seed).child(index)
so running a subset of suites never changes the reports of the others.
"""

import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from functools import partial
from typing import Callable

import numpy as np

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import SampleTooSmall
from levelloop.schemas import ExperimentConfig, ExperimentRead, McReport
from levelloop.services import continuum, lattice_gff, statistics, whole_plane
from levelloop.services.level_loops import as_fraction, clockwise_probability, sample_level_loop
from levelloop.services.loewner import Orientation
from levelloop.services.rng import StreamId
from levelloop.services.sequences import (
    alternating_sequence,
    downward_sequence,
    ledger_violations,
    target_independence_experiment,
    upward_sequence,
)
from levelloop.services.sle_driver import run_to_threshold, trace_stability, weights_from_height
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import parallel_replicas

logger = logging.getLogger(__name__)

SUITES = ("loop_laws", "sequence_laws", "refinement", "whole_plane", "continuum", "lattice")
ORIENTATION_HEIGHTS = ("-0.5", "0", "0.5")
GEOMETRIC_RS = ("0.25", "0.5")
GEOMETRIC_TAIL = 5
SEED_ANGLE = 1.0
ORACLE_R = "0.25"
TARGET_PAIR = (0.4 + 0j, -0.4 + 0j)
WHOLE_PLANE_DELTAS = (1 / 4, 1 / 16, 1 / 64)
MARTINGALE_GRID = (0.25, 0.5, 0.75, 1.0, 1.5)
MERGE_SIZES = (64, 128)


@dataclass(frozen=True)
class RunContext:
    config: ExperimentConfig
    params: EngineParams
    stream: StreamId
    replicas: int

    @property
    def workers(self) -> int:
        return self.config.workers


@dataclass(frozen=True)
class Experiment:
    experiment_id: str
    suite: str
    anchor: str
    gate: str
    run: Callable[[RunContext], McReport]
    share: float = 1.0

    def to_read(self) -> ExperimentRead:
        return ExperimentRead(experiment_id=self.experiment_id, suite=self.suite, anchor=self.anchor, gate=self.gate)


def params_from_config(config: ExperimentConfig) -> EngineParams:
    return replace(
        DEFAULT_PARAMS,
        step=config.step,
        delta_touch=config.delta_touch,
        delta_merge=config.delta_merge,
        trace_tol=config.trace_tol,
    )


# loop laws


def _is_clockwise(stream: StreamId, height: Fraction, seed_angle: float, params: EngineParams) -> bool:
    loop = sample_level_loop(height, 0j, stream, seed_angle=seed_angle, params=params)
    return loop.orientation is Orientation.CLOCKWISE


def _orientation_gates(report: ReportBuilder, ctx: RunContext, heights, seed_angle: float) -> None:
    for i, text in enumerate(heights):
        height = as_fraction(text)
        replica = partial(_is_clockwise, height=height, seed_angle=seed_angle, params=ctx.params)
        outcomes = parallel_replicas(replica, ctx.stream.child(i), ctx.replicas, workers=ctx.workers)
        hits = [o.value for o in outcomes if o.ok]
        report.binomial(f"P_clockwise_u{text}", sum(hits), len(hits), clockwise_probability(height))
        report.failures(outcomes)


def orientation_law(ctx: RunContext) -> McReport:
    report = ReportBuilder("loop_laws.orientation", "P[L_u clockwise] = (1 + u)/2")
    _orientation_gates(report, ctx, ORIENTATION_HEIGHTS, 0.0)
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def seed_angle_invariance(ctx: RunContext) -> McReport:
    report = ReportBuilder("loop_laws.seed_angle", "the orientation law does not depend on the seed point")
    _orientation_gates(report, ctx, ("0",), SEED_ANGLE)
    report.param("seed_angle", SEED_ANGLE)
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def _loop_summary(stream: StreamId, params: EngineParams) -> tuple[float, bool]:
    loop = sample_level_loop(Fraction(0), 0j, stream, params=params)
    return loop.log_cr, loop.orientation is Orientation.CLOCKWISE


def step_consistency(ctx: RunContext) -> McReport:
    """(log CR, orientation) of L_0 at step h against h/2."""
    report = ReportBuilder("loop_laws.step_consistency", "the loop law does not depend on the SDE step")
    samples = []
    for i, step in enumerate((ctx.params.step, ctx.params.step / 2)):
        replica = partial(_loop_summary, params=ctx.params.with_step(step))
        outcomes = parallel_replicas(replica, ctx.stream.child(i), ctx.replicas, workers=ctx.workers)
        samples.append([o.value for o in outcomes if o.ok])
        report.failures(outcomes)
    coarse, fine = samples
    report.ks_two_sample("log_cr_law", [s[0] for s in coarse], [s[0] for s in fine])
    for label, sample in (("coarse", coarse), ("fine", fine)):
        report.binomial(f"P_clockwise_{label}", sum(s[1] for s in sample), len(sample), 0.5)
    report.param("fine_step", ctx.params.step / 2)
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def _trace_distance(stream: StreamId, params: EngineParams) -> float:
    run = run_to_threshold(
        weights_from_height(0), 0.0, stream, params=params.with_step(params.step / 2), record_path=True
    )
    return trace_stability(run.path, params.step, params)


def step_halving_traces(ctx: RunContext) -> McReport:
    """One driving function per replica, slit at step h and h/2; traces compared in Hausdorff distance."""
    report = ReportBuilder("loop_laws.trace_stability", "extracted traces move by less than trace_tol when the step halves")
    replica = partial(_trace_distance, params=ctx.params)
    outcomes = parallel_replicas(replica, ctx.stream, ctx.replicas, workers=ctx.workers)
    distances = np.array([o.value for o in outcomes if o.ok])
    report.estimate("hausdorff", distances)
    if distances.size:
        median, worst = float(np.median(distances)), float(distances.max())
        report.gate("median_within_trace_tol", median, median <= ctx.params.trace_tol)
        report.gate("max_within_trace_tol", worst, worst <= ctx.params.trace_tol, hard=False)
    report.failures(outcomes)
    report.param("trace_tol", ctx.params.trace_tol)
    report.param("fine_step", ctx.params.step / 2)
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def _exp1_p_value(stream: StreamId, size: int, rate: float) -> float:
    sample = stream.generator().exponential(1 / rate, size)
    return statistics.ks_test(np.sort(sample), "exp1").p_value


def ks_self_test(ctx: RunContext) -> McReport:
    """The KS gate accepts its own reference and rejects Exp(2)."""
    report = ReportBuilder("loop_laws.ks_self_test", "plumbing")
    trials = max(ctx.replicas // 10, 100)
    null = [_exp1_p_value(ctx.stream.child(0, i), 100, 1.0) for i in range(trials)]
    accepted = sum(p > statistics.GATE_ALPHA for p in null)
    report.proportion("null_acceptance", accepted, trials)
    report.gate("null_acceptance_99pct", accepted / trials, accepted >= 0.99 * trials)
    power = _exp1_p_value(ctx.stream.child(1), 1000, 2.0)
    report.gate("rejects_exp2", power, power < statistics.GATE_ALPHA, p_value=power)
    quantiles = -np.log1p(-(np.arange(1, 1001) - 0.5) / 1000)
    exact = statistics.ks_test(quantiles, "exp1").statistic
    report.gate("reference_quantiles", exact, exact < 1e-3)
    return report.build(ctx.stream, trials)


# sequence laws


def _upward_length(stream: StreamId, r: Fraction, params: EngineParams) -> int:
    return upward_sequence(r, 0j, stream, params=params).N


def geometric_transition(ctx: RunContext) -> McReport:
    report = ReportBuilder("sequence_laws.geometric_N", "P[N > n] = (1 - r/2)^n")
    for i, text in enumerate(GEOMETRIC_RS):
        r = as_fraction(text)
        outcomes = parallel_replicas(
            partial(_upward_length, r=r, params=ctx.params), ctx.stream.child(i), ctx.replicas, workers=ctx.workers
        )
        lengths = np.array([o.value for o in outcomes if o.ok])
        report.estimate(f"N_mean_r{text}", lengths)
        for n in range(GEOMETRIC_TAIL + 1):
            report.binomial(f"P_N_gt_{n}_r{text}", int(np.count_nonzero(lengths > n)), lengths.size, (1 - float(r) / 2) ** n)
        report.failures(outcomes)
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def _ledger_count(stream: StreamId, r: Fraction, params: EngineParams) -> tuple[int, int]:
    sequences = (
        upward_sequence(r, 0j, stream.child(0), params=params),
        downward_sequence(r, 0j, stream.child(1), params=params),
        alternating_sequence(r, 0j, None, stream.child(2), n_blocks=4, params=params),
    )
    return sum(len(ledger_violations(seq)) for seq in sequences), sum(seq.N + 1 for seq in sequences)


def ledger_exactness(ctx: RunContext) -> McReport:
    report = ReportBuilder("sequence_laws.ledger", "m_{M_k} = sum_j (-1)^j N_j r exactly")
    r = as_fraction(ctx.config.r)
    outcomes = parallel_replicas(
        partial(_ledger_count, r=r, params=ctx.params), ctx.stream, ctx.replicas, workers=ctx.workers
    )
    counts = [o.value for o in outcomes if o.ok]
    violations = sum(c[0] for c in counts)
    report.value("loops_checked", sum(c[1] for c in counts))
    report.gate("ledger_violations", violations, violations == 0)
    report.failures(outcomes)
    report.param("r", float(r))
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def _blocks(stream: StreamId, r: Fraction, params: EngineParams) -> tuple[int, ...]:
    return alternating_sequence(r, 0j, None, stream, n_blocks=4, params=params).block_lengths


def block_lengths(ctx: RunContext) -> McReport:
    report = ReportBuilder("sequence_laws.blocks", "upward and downward block lengths are geometric(r/2)")
    r = as_fraction(ctx.config.r)
    outcomes = parallel_replicas(partial(_blocks, r=r, params=ctx.params), ctx.stream, ctx.replicas, workers=ctx.workers)
    runs = [o.value for o in outcomes if o.ok]
    pooled = np.array([b for run in runs for b in run])
    report.estimate("block_mean", pooled)
    try:
        chi2, p_value = statistics.geometric_chi_square(pooled, float(r) / 2)
        report.gate("geometric_chi_square", chi2, p_value > statistics.GATE_ALPHA, p_value=p_value)
    except SampleTooSmall as e:
        report.note(str(e))
        report.gate("geometric_chi_square", float("nan"), False)
    report.ks_two_sample("upward_vs_downward", [run[0] for run in runs], [run[1] for run in runs])
    report.failures(outcomes)
    report.param("r", float(r))
    return report.build(ctx.stream, ctx.replicas, ctx.params)


def target_independence(ctx: RunContext) -> McReport:
    return target_independence_experiment(
        as_fraction(ctx.config.r), *TARGET_PAIR, ctx.replicas, ctx.stream, params=ctx.params, workers=ctx.workers
    )


# refinement and continuum


def refinement_tower(ctx: RunContext) -> McReport:
    outcomes = continuum.sample_towers(1, ctx.config.tower_k_max, ctx.replicas, ctx.stream, params=ctx.params, workers=ctx.workers)
    return continuum.tower_report(outcomes, ctx.stream, params=ctx.params)


def refinement_oracle(ctx: RunContext) -> McReport:
    return continuum.refinement_oracle_experiment(
        as_fraction(ORACLE_R), ctx.replicas, ctx.stream, params=ctx.params, workers=ctx.workers
    )


def _towers(ctx: RunContext):
    outcomes = continuum.sample_towers(1, ctx.config.tower_k_max, ctx.replicas, ctx.stream, params=ctx.params, workers=ctx.workers)
    return [o.value for o in outcomes if o.ok], outcomes


def cr_martingale(ctx: RunContext) -> McReport:
    towers, outcomes = _towers(ctx)
    report = continuum.conformal_radius_martingale_check(towers, MARTINGALE_GRID, rng_stream=ctx.stream, params=ctx.params)
    failures = dict(report.failures)
    for o in outcomes:
        if not o.ok:
            failures[o.error] = failures.get(o.error, 0) + 1
    return report.model_copy(update={"failures": dict(sorted(failures.items()))})


def cadlag(ctx: RunContext) -> McReport:
    towers, _ = _towers(ctx)
    return continuum.cadlag_diagnostics(towers, rng_stream=ctx.stream, params=ctx.params)


def nested_cle(ctx: RunContext) -> McReport:
    return continuum.nested_cle_statistics(
        3, 0j, ctx.stream, n_runs=ctx.replicas, k=min(ctx.config.tower_k_max, 6), params=ctx.params, workers=ctx.workers
    )


# whole plane


def whole_plane_trend(ctx: RunContext) -> McReport:
    return whole_plane.convergence_trend(
        WHOLE_PLANE_DELTAS, ctx.replicas, ctx.stream, r=as_fraction(ctx.config.r), params=ctx.params, workers=ctx.workers
    )


def transience(ctx: RunContext) -> McReport:
    return whole_plane.transience_report(
        ctx.replicas, ctx.stream, r=as_fraction(ctx.config.r), params=ctx.params, workers=ctx.workers
    )


# lattice


def lattice_covariance(ctx: RunContext) -> McReport:
    return lattice_gff.validate_covariance(ctx.config.lattice_n, ctx.replicas, ctx.stream)


def lattice_markov(ctx: RunContext) -> McReport:
    return lattice_gff.markov_check(min(ctx.config.lattice_n, 64), ctx.replicas, ctx.stream)


def lattice_orientation(ctx: RunContext) -> McReport:
    return lattice_gff.orientation_experiment(ctx.config.lattice_n, ctx.replicas, ctx.stream, workers=ctx.workers)


def lattice_conditional_mean(ctx: RunContext) -> McReport:
    return lattice_gff.conditional_mean_experiment(
        ctx.config.lattice_n, ctx.replicas, ctx.config.r, ctx.stream, n_loops=2, workers=ctx.workers
    )


def lattice_merge(ctx: RunContext) -> McReport:
    return lattice_gff.merge_experiment(MERGE_SIZES, ctx.replicas, ctx.config.r, ctx.stream, workers=ctx.workers)


BINOMIAL, KS, EXACT, SOFT = "binomial_3sigma", "ks_0.001", "exact", "soft"

# Registry order fixes each experiment's stream; append new experiments at the end.
REGISTRY: tuple[Experiment, ...] = (
    Experiment("loop_laws.orientation", "loop_laws", "P[L_u clockwise] = (1 + u)/2", BINOMIAL, orientation_law, 1.0),
    Experiment("loop_laws.seed_angle", "loop_laws", "orientation law at a nonzero seed point", BINOMIAL, seed_angle_invariance, 1.0),
    Experiment("loop_laws.step_consistency", "loop_laws", "loop law stable under step halving", KS, step_consistency, 1.0),
    Experiment("loop_laws.ks_self_test", "loop_laws", "plumbing", EXACT, ks_self_test, 1.0),
    Experiment("sequence_laws.geometric_N", "sequence_laws", "P[N > n] = (1 - r/2)^n", BINOMIAL, geometric_transition, 1.0),
    Experiment("sequence_laws.ledger", "sequence_laws", "m_{M_k} = sum_j (-1)^j N_j r", EXACT, ledger_exactness, 0.2),
    Experiment("sequence_laws.blocks", "sequence_laws", "block lengths are geometric(r/2)", KS, block_lengths, 0.5),
    Experiment(
        "sequence_laws.target_independence",
        "sequence_laws",
        "targeted sequences agree in law until they separate",
        KS,
        target_independence,
        0.5,
    ),
    Experiment("refinement.tower", "refinement", "0 <= tau(k) - tau(k+1) <= 2^(-k-2); tau -> Exp(1)", EXACT, refinement_tower, 1.0),
    Experiment("refinement.oracle", "refinement", "refinement at r matches direct simulation at r/2", KS, refinement_oracle, 0.5),
    Experiment("continuum.cr_martingale", "continuum", "E[M_u] <= C 2^-n", BINOMIAL, cr_martingale, 0.5),
    Experiment("continuum.cadlag", "continuum", "u -> L_u is cadlag", EXACT, cadlag, 0.2),
    Experiment("continuum.nested_cle", "continuum", "transition loops form nested CLE_4 generations", KS, nested_cle, 0.2),
    Experiment("whole_plane.convergence_trend", "whole_plane", "the loop at index 0 converges as epsilon -> 0", EXACT, whole_plane_trend, 0.2),
    Experiment("whole_plane.transience", "whole_plane", "sequences converge to the target and to infinity", EXACT, transience, 0.1),
    Experiment("lattice.covariance", "lattice", "lattice covariance is the Green's function", SOFT, lattice_covariance, 1.0),
    Experiment("lattice.markov", "lattice", "domain Markov property across a contour", SOFT, lattice_markov, 1.0),
    Experiment("lattice.orientation", "lattice", "P[clockwise] = 1/2 at u = 0 on the lattice", SOFT, lattice_orientation, 0.2),
    Experiment("lattice.conditional_mean", "lattice", "m_1 = -r or 2 - r given the orientation", SOFT, lattice_conditional_mean, 0.2),
    Experiment("lattice.merge", "lattice", "sequences toward two points coincide after separating", SOFT, lattice_merge, 0.1),
    Experiment("loop_laws.trace_stability", "loop_laws", "traces stable under step halving", EXACT, step_halving_traces, 0.1),
)


def experiment_index(experiment_id: str) -> int:
    for i, experiment in enumerate(REGISTRY):
        if experiment.experiment_id == experiment_id:
            return i
    raise KeyError(experiment_id)


def experiments_for(suite: str) -> list[tuple[int, Experiment]]:
    if suite == "all":
        return list(enumerate(REGISTRY))
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose one of {', '.join(SUITES + ('all',))}")
    return [(i, e) for i, e in enumerate(REGISTRY) if e.suite == suite]


def replica_count(config: ExperimentConfig, experiment: Experiment) -> int:
    """Replicas for one experiment: an explicit override, else the configured count scaled by its share."""
    return config.replicas_for(experiment.experiment_id, experiment.share)


def describe() -> list[str]:
    width = max(len(e.experiment_id) for e in REGISTRY)
    return [f"{e.experiment_id:<{width}}  {e.suite:<13}  {e.gate:<15}  {e.anchor}" for e in REGISTRY]

