"""Statistical gates and report assembly for the Monte Carlo experiments.

Hard gates are 3 sigma binomial bands or Kolmogorov-Smirnov tests at the 0.1% level.
Tests that come out below those levels but above 5% are still reported, never gated.
"""

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np
import scipy.stats

from levelloop.config import EngineParams
from levelloop.errors import SampleTooSmall
from levelloop.schemas import Estimate, GateResult, McReport, SeedRange
from levelloop.services.rng import StreamId

logger = logging.getLogger(__name__)

MIN_SAMPLE = 30
GATE_ALPHA = 0.001
GATE_SIGMAS = 3.0


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float

    def __iter__(self):
        yield self.statistic
        yield self.p_value


def exp1_cdf(x):
    return scipy.stats.expon.cdf(x)


def geometric_cdf(p: float, scale: float = 1.0):
    """CDF of scale * N with P[N > n] = (1 - p)^n, N >= 1."""
    if not 0 < p <= 1:
        raise ValueError(f"geometric success probability must lie in (0, 1], got {p}")

    def cdf(x):
        n = np.floor(np.asarray(x, dtype=float) / scale + 1e-9)
        return np.where(n < 1, 0.0, 1.0 - (1.0 - p) ** np.maximum(n, 0.0))

    return cdf


def geometric_exp1_distance(p: float, scale: float) -> float:
    """Exact sup distance between the scaled geometric law and Exp(1)."""
    k = np.arange(1, int(40 / p) + 2)
    tail_exp = np.exp(-k * scale)
    before = (1 - p) ** (k - 1)
    after = (1 - p) ** k
    return float(max(np.max(np.abs(tail_exp - before)), np.max(np.abs(tail_exp - after))))


def _checked(sample) -> np.ndarray:
    sample = np.sort(np.asarray(sample, dtype=float).reshape(-1))
    if sample.size < MIN_SAMPLE:
        raise SampleTooSmall(int(sample.size), MIN_SAMPLE)
    return sample


def ks_test(sample, cdf: str = "exp1", *, p: float | None = None, scale: float = 1.0, reference=None) -> KsResult:
    """One- or two-sample Kolmogorov-Smirnov test against a named reference.

    `cdf` is one of "exp1", "geometric" (needs `p`, optional `scale`) or "empirical"
    (needs a `reference` sample).
    """
    sample = _checked(sample)
    if cdf == "exp1":
        result = scipy.stats.kstest(sample, exp1_cdf)
    elif cdf == "geometric":
        if p is None:
            raise ValueError("geometric reference needs p")
        result = scipy.stats.kstest(sample, geometric_cdf(p, scale))
    elif cdf == "empirical":
        if reference is None:
            raise ValueError("empirical reference needs a reference sample")
        result = scipy.stats.ks_2samp(sample, _checked(reference))
    else:
        raise ValueError(f"unknown reference {cdf!r}")
    return KsResult(float(result.statistic), float(result.pvalue))


def binomial_band(successes: int, n: int, p: float, sigmas: float = GATE_SIGMAS) -> tuple[float, bool]:
    """z score of an observed proportion and whether it lies within the band."""
    if n <= 0:
        raise SampleTooSmall(n, 1)
    sd = math.sqrt(p * (1 - p) / n)
    z = (successes / n - p) / sd if sd > 0 else 0.0
    return z, abs(z) <= sigmas


def mean_band(sample, expected: float, sigmas: float = GATE_SIGMAS) -> tuple[float, bool]:
    sample = np.asarray(sample, dtype=float)
    stderr = sample.std(ddof=1) / math.sqrt(sample.size)
    z = (sample.mean() - expected) / stderr if stderr > 0 else 0.0
    return float(z), abs(z) <= sigmas


def geometric_chi_square(blocks: np.ndarray, p: float, max_bin: int | None = None) -> tuple[float, float]:
    """Chi-square goodness of fit of integer samples to geometric(p) on N >= 1."""
    blocks = np.asarray(blocks, dtype=int).reshape(-1)
    if blocks.size < MIN_SAMPLE:
        raise SampleTooSmall(int(blocks.size), MIN_SAMPLE)
    if max_bin is None:
        max_bin = max(int(math.ceil(math.log(5.0 / blocks.size) / math.log(1 - p))), 2)
    edges = np.arange(1, max_bin + 1)
    observed = np.array([np.count_nonzero(blocks == k) for k in edges[:-1]] + [np.count_nonzero(blocks >= max_bin)])
    probs = np.append(p * (1 - p) ** (edges[:-1] - 1), (1 - p) ** (max_bin - 1))
    result = scipy.stats.chisquare(observed, probs * blocks.size)
    return float(result.statistic), float(result.pvalue)


def runs_test(sample) -> tuple[float, float]:
    """Wald-Wolfowitz runs test about the median; (z, two-sided p)."""
    sample = np.asarray(sample, dtype=float)
    median = np.median(sample)
    signs = sample[sample != median] > median
    n1, n2 = int(np.count_nonzero(signs)), int(np.count_nonzero(~signs))
    if n1 == 0 or n2 == 0:
        return 0.0, 1.0
    runs = 1 + int(np.count_nonzero(signs[1:] != signs[:-1]))
    n = n1 + n2
    mean = 2 * n1 * n2 / n + 1
    var = 2 * n1 * n2 * (2 * n1 * n2 - n) / (n * n * (n - 1))
    z = (runs - mean) / math.sqrt(var) if var > 0 else 0.0
    return z, float(2 * scipy.stats.norm.sf(abs(z)))


def lag1_correlation(*series) -> tuple[float, float]:
    """Lag-1 sample correlation and its z score under independence.

    Pairs are taken between consecutive values of the same series, never across two.
    """
    pairs = np.array([(s[j], s[j + 1]) for s in series for j in range(len(s) - 1)], dtype=float)
    if len(pairs) < 2:
        raise SampleTooSmall(len(pairs) + 1, 3)
    rho = float(np.corrcoef(pairs[:, 0], pairs[:, 1])[0, 1])
    return rho, rho * math.sqrt(len(pairs))


def anderson_normal(sample) -> tuple[float, bool]:
    """Anderson-Darling normality statistic and whether it passes at 1%."""
    result = scipy.stats.anderson(np.asarray(sample, dtype=float), dist="norm")
    critical = dict(zip(result.significance_level, result.critical_values))[1.0]
    return float(result.statistic), bool(result.statistic < critical)


def loglog_slope(x, y) -> tuple[float, float]:
    """Least squares fit of log y = a + b log x; returns (b, exp(a))."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 2:
        return float("nan"), float("nan")
    slope, intercept = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(slope), float(math.exp(intercept))


class ReportBuilder:
    """Collects estimates and gates of one experiment into an McReport."""

    def __init__(self, experiment_id: str, anchor: str, approximate: bool = False):
        self.experiment_id = experiment_id
        self.anchor = anchor
        self.approximate = approximate
        self._estimates: dict[str, Estimate] = {}
        self._tests: dict[str, GateResult] = {}
        self._failures: Counter = Counter()
        self._params: dict[str, float | int | str] = {}
        self._notes: list[str] = []
        self._started = time.perf_counter()

    def value(self, name: str, value: float, stderr: float | None = None) -> None:
        self._estimates[name] = Estimate(value=float(value), stderr=None if stderr is None else float(stderr))

    def estimate(self, name: str, sample) -> None:
        sample = np.asarray(sample, dtype=float)
        if sample.size == 0:
            self.note(f"{name}: empty sample")
            return
        stderr = float(sample.std(ddof=1) / math.sqrt(sample.size)) if sample.size > 1 else None
        self.value(name, float(sample.mean()), stderr)

    def proportion(self, name: str, successes: int, n: int) -> None:
        p = successes / n if n else float("nan")
        self.value(name, p, math.sqrt(p * (1 - p) / n) if n else None)

    def gate(self, name: str, statistic: float, passed: bool, *, p_value: float | None = None, hard: bool = True) -> None:
        self._tests[name] = GateResult(
            statistic=float(statistic), p_value=None if p_value is None else float(p_value), passed=bool(passed), hard=hard
        )
        if hard and not passed:
            logger.info(f"{self.experiment_id}: gate {name} failed (statistic {statistic:.4g})")

    def binomial(self, name: str, successes: int, n: int, p: float, *, hard: bool = True) -> None:
        self.proportion(name, successes, n)
        z, passed = binomial_band(successes, n, p)
        self.gate(f"{name}_band", z, passed, p_value=float(2 * scipy.stats.norm.sf(abs(z))), hard=hard)

    def ks(self, name: str, sample, cdf: str = "exp1", *, hard: bool = True, alpha: float = GATE_ALPHA, **kwargs) -> None:
        try:
            result = ks_test(sample, cdf, **kwargs)
        except SampleTooSmall as e:
            self.note(f"{name}: {e}")
            self.gate(name, float("nan"), False, hard=hard)
            return
        self.gate(name, result.statistic, result.p_value > alpha, p_value=result.p_value, hard=hard)

    def ks_two_sample(self, name: str, a, b, *, hard: bool = True, alpha: float = GATE_ALPHA) -> None:
        self.ks(name, a, "empirical", reference=b, hard=hard, alpha=alpha)

    def failures(self, outcomes) -> None:
        for outcome in outcomes:
            if not outcome.ok:
                self._failures[outcome.error] += 1

    def param(self, name: str, value) -> None:
        self._params[name] = value

    def note(self, text: str) -> None:
        self._notes.append(text)

    def build(self, stream: StreamId, n_runs: int, params: EngineParams | None = None) -> McReport:
        engine_params = dict(params.snapshot()) if params is not None else {}
        engine_params.update(self._params)
        report = McReport(
            experiment_id=self.experiment_id,
            anchor=self.anchor,
            estimates=self._estimates,
            tests=self._tests,
            seeds=SeedRange(seed=stream.seed, first_replica=0, count=n_runs),
            runtime_s=time.perf_counter() - self._started,
            engine_params=engine_params,
            approximate=self.approximate,
            failures=dict(sorted(self._failures.items())),
            notes=self._notes,
        )
        logger.info(f"{self.experiment_id}: {'pass' if report.passed else 'FAIL'} in {report.runtime_s:.1f}s")
        return report
