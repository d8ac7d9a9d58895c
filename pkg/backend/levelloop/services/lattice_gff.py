"""Discrete Gaussian free field on a triangular lattice and sign-cluster level loops.

Vertices live on an n x n axial grid (a, b) at positions (a - m) + (b - m) e^{i pi/3},
m = n // 2, restricted to a disk. The Dirichlet Laplacian is Q = B^T B for the edge
incidence matrix B (edges to the outside only touch the diagonal), so x = Q^-1 B^T xi
with xi standard normal on edges has covariance Q^-1. Field values are converted to
lambda units through a fitted Green's function scale.

All lattice results are approximate cross-checks of the SLE engine.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property, lru_cache, partial
from pathlib import Path
from typing import Any

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import splu

from levelloop.config import LAMBDA_LATTICE
from levelloop.errors import LatticeError, NoLoopFound, SizeTooLarge
from levelloop.schemas import McReport
from levelloop.services import conformal, statistics
from levelloop.services.level_loops import BoundaryLedger, as_fraction, clockwise_probability
from levelloop.services.loewner import Orientation, OrientedLoop
from levelloop.services.rng import StreamId
from levelloop.services.statistics import ReportBuilder
from levelloop.services.workers import ReplicaOutcome, parallel_replicas

logger = logging.getLogger(__name__)

MAX_SIZE = 512
MIN_SIZE = 16
RADIUS_FRACTION = 0.8 * math.sqrt(3) / 2
OMEGA = np.exp(1j * np.pi / 3)
# counterclockwise neighbor directions in axial coordinates
DIRECTIONS = ((1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1))
STRUCTURE = np.array([[0, 1, 1], [1, 1, 1], [1, 1, 0]], dtype=bool)
DUMP_HEADER = np.dtype([("magic", "S4"), ("n", "<u4"), ("boundary_value", "<f8"), ("seed", "<u8"), ("pad", "V8")])
DUMP_MAGIC = b"DGFF"


def _check_size(n: int) -> None:
    if n > MAX_SIZE:
        raise SizeTooLarge(f"lattice size {n} exceeds {MAX_SIZE}")
    if n < MIN_SIZE:
        raise ValueError(f"lattice size must be at least {MIN_SIZE}, got {n}")


@dataclass(frozen=True, eq=False)
class LatticeShape:
    n: int
    mask: np.ndarray
    positions: np.ndarray
    radius: float

    @property
    def center(self) -> tuple[int, int]:
        return (self.n // 2, self.n // 2)


@lru_cache(maxsize=8)
def lattice_shape(n: int) -> LatticeShape:
    _check_size(n)
    m = n // 2
    a, b = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    positions = (a - m) + (b - m) * OMEGA
    radius = RADIUS_FRACTION * (m - 1)
    mask = np.abs(positions) < radius
    for array in (mask, positions):
        array.setflags(write=False)
    return LatticeShape(n, mask, positions, radius)


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    shape: LatticeShape
    index: np.ndarray
    incidence: sparse.csr_matrix
    factor: Any
    green_scale: float
    green_offset: float

    def green_column(self, vertex: tuple[int, int]) -> np.ndarray:
        """Q^-1 e_vertex on the grid, NaN outside the domain."""
        k = self.index[vertex]
        if k < 0:
            raise ValueError(f"vertex {vertex} is outside the domain")
        unit = np.zeros(self.incidence.shape[1])
        unit[k] = 1.0
        column = np.full(self.index.shape, np.nan)
        column[self.shape.mask] = self.factor.solve(unit)
        return column

    def sample_raw(self, gen: np.random.Generator) -> np.ndarray:
        xi = gen.standard_normal(self.incidence.shape[0])
        return self.factor.solve(self.incidence.T @ xi)

    @property
    def to_lambda(self) -> float:
        return 1.0 / (math.sqrt(self.green_scale) * LAMBDA_LATTICE)


@lru_cache(maxsize=4)
def lattice_geometry(n: int) -> LatticeGeometry:
    """Incidence matrix, sparse LU of Q and Green's function calibration for size n."""
    shape = lattice_shape(n)
    mask = shape.mask
    index = np.full((n, n), -1, dtype=np.int64)
    index[mask] = np.arange(int(mask.sum()))
    ia, ib = np.nonzero(mask)
    u = index[ia, ib]
    rows, cols, vals = [], [], []
    edges = 0
    for k, (da, db) in enumerate(DIRECTIONS):
        v = index[ia + da, ib + db]
        inner = v >= 0
        if k < 3:
            count = int(inner.sum())
            ids = np.arange(edges, edges + count)
            rows += [ids, ids]
            cols += [u[inner], v[inner]]
            vals += [np.ones(count), -np.ones(count)]
            edges += count
        count = int((~inner).sum())
        ids = np.arange(edges, edges + count)
        rows.append(ids)
        cols.append(u[~inner])
        vals.append(np.ones(count))
        edges += count
    incidence = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(edges, u.size)
    ).tocsr()
    factor = splu((incidence.T @ incidence).tocsc())

    unit = np.zeros(u.size)
    unit[index[shape.center]] = 1.0
    green = factor.solve(unit)
    distance = np.abs(shape.positions[mask] - shape.positions[shape.center])
    fit = (distance >= 2) & (distance <= shape.radius / 2)
    design = np.column_stack([-np.log(distance[fit]), np.ones(int(fit.sum()))])
    (scale, offset), *_ = np.linalg.lstsq(design, green[fit], rcond=None)
    logger.info(f"lattice n={n}: {u.size} vertices, {edges} edges, Green's scale {scale:.5f}")
    return LatticeGeometry(shape, index, incidence, factor, float(scale), float(offset))


@dataclass(frozen=True, eq=False)
class LatticeField:
    grid: np.ndarray
    mask: np.ndarray
    boundary_value: float
    n: int
    seed: int = 0

    @property
    def shape(self) -> LatticeShape:
        return lattice_shape(self.n)

    @property
    def center(self) -> tuple[int, int]:
        return self.shape.center

    def unit_position(self, vertex) -> complex:
        return complex(self.shape.positions[tuple(vertex)] / self.shape.radius)

    def negated(self) -> "LatticeField":
        return LatticeField(-self.grid, self.mask, -self.boundary_value, self.n, self.seed)

    def reflected(self) -> "LatticeField":
        """Point reflection through the center vertex."""
        m = self.n // 2
        a, b = np.nonzero(self.mask)
        grid = np.full(self.grid.shape, np.nan)
        mask = np.zeros_like(self.mask)
        grid[2 * m - a, 2 * m - b] = self.grid[a, b]
        mask[2 * m - a, 2 * m - b] = True
        return LatticeField(grid, mask, self.boundary_value, self.n, self.seed)

    @cached_property
    def boundary_layer(self) -> np.ndarray:
        return self.mask & ~ndimage.binary_erosion(self.mask, structure=STRUCTURE, border_value=0)


def sample_dgff(n: int, boundary_value: float = 0.0, rng_stream: StreamId | None = None) -> LatticeField:
    if rng_stream is None:
        raise ValueError("sample_dgff needs an rng stream")
    geometry = lattice_geometry(n)
    values = geometry.sample_raw(rng_stream.generator()) * geometry.to_lambda + boundary_value
    grid = np.full((n, n), np.nan)
    grid[geometry.shape.mask] = values
    return LatticeField(grid, geometry.shape.mask, float(boundary_value), n, rng_stream.seed)


def restrict(field: LatticeField, region: np.ndarray, boundary_value: float) -> LatticeField:
    """The field seen inside `region` with a new constant boundary value."""
    mask = region & field.mask
    return LatticeField(np.where(mask, field.grid, np.nan), mask, float(boundary_value), field.n, field.seed)


def _signs(field: LatticeField, height: float) -> np.ndarray:
    values = np.where(field.mask, field.grid + height, 0.0)
    return np.where(field.mask, np.where(values >= 0, 1, -1), 0)


def _boundary_sign(field: LatticeField, height: float) -> int:
    level = field.boundary_value + height
    if level == 0:
        level = float(np.mean(field.grid[field.boundary_layer] + height))
    return 1 if level >= 0 else -1


def _fill(cluster: np.ndarray, domain: np.ndarray) -> np.ndarray:
    """Cluster together with every hole that does not reach outside the domain."""
    components, _ = ndimage.label(~cluster, structure=STRUCTURE)
    exterior = np.unique(components[~domain])
    exterior = exterior[exterior > 0]
    return ~np.isin(components, exterior)


def level_region(field: LatticeField, height: float, target) -> tuple[np.ndarray, int]:
    """Vertices enclosed by the level loop around `target`, and the field sign just inside it."""
    target = tuple(target)
    signs = _signs(field, height)
    sigma = _boundary_sign(field, height)
    opposite = field.mask & (signs == -sigma)
    labels, _ = ndimage.label(opposite, structure=STRUCTURE)
    touching = np.unique(labels[field.boundary_layer & opposite])
    touching = touching[touching > 0]
    if touching.size == 0:
        raise NoLoopFound(f"no sign change reaches the boundary at height {height}")
    attached = np.isin(labels, touching)
    if attached[target]:
        return _fill(labels == labels[target], field.mask), -sigma
    components, _ = ndimage.label(~attached, structure=STRUCTURE)
    k = components[target]
    if k in components[~field.mask]:
        raise NoLoopFound(f"no contour separates {target} from the boundary at height {height}")
    return components == k, sigma


def trace_region_boundary(region: np.ndarray) -> np.ndarray:
    """Closed hexagonal interface around a simply connected vertex set, in lattice units."""
    ia, ib = np.nonzero(region)
    adjacency: dict[tuple[int, int], list[tuple[int, int]]] = defaultdict(list)
    for k, (da, db) in enumerate(DIRECTIONS):
        outside = ~region[ia + da, ib + db]
        before, after = DIRECTIONS[k - 1], DIRECTIONS[(k + 1) % 6]
        for a, b in zip(ia[outside].tolist(), ib[outside].tolist()):
            first = (3 * a + da + before[0], 3 * b + db + before[1])
            second = (3 * a + da + after[0], 3 * b + db + after[1])
            adjacency[first].append(second)
            adjacency[second].append(first)
    if not adjacency:
        raise LatticeError("region has no boundary")
    start = min(adjacency)
    path, previous, current = [start], None, start
    while True:
        step = next(node for node in adjacency[current] if node != previous)
        if step == start:
            break
        path.append(step)
        previous, current = current, step
    if len(path) != len(adjacency):
        raise LatticeError(f"region boundary has {len(adjacency)} nodes but the walk covers {len(path)}")
    m = region.shape[0] // 2
    keys = np.array(path, dtype=float)
    return ((keys[:, 0] - 3 * m) + (keys[:, 1] - 3 * m) * OMEGA) / 3


def extract_level_loop(
    field: LatticeField, height: float, target=None, *, n_collocation: int = 256
) -> OrientedLoop:
    """Level loop of the field around `target`, larger values on its right."""
    if not abs(height + field.boundary_value) < 1:
        raise ValueError(f"|height + boundary value| = {abs(height + field.boundary_value)} is not below 1")
    target = field.center if target is None else tuple(target)
    if not field.mask[target]:
        raise ValueError(f"target {target} is outside the domain")
    region, inside = level_region(field, height, target)
    trace = trace_region_boundary(region)
    point = field.shape.positions[target]
    clockwise = inside > 0
    if (conformal.winding_number(trace, point) < 0) != clockwise:
        trace = trace[::-1]
    return OrientedLoop.from_polyline(
        trace / field.shape.radius, field.unit_position(target), height, n_collocation=n_collocation
    )


@dataclass(frozen=True)
class LoopStep:
    index: int
    orientation: str
    expected: float
    interior_mean: float


def conditional_means(field: LatticeField, r: float, n_loops: int = 1, target=None) -> list[LoopStep]:
    """Interior means along the lattice upward sequence from the domain boundary."""
    target = field.center if target is None else tuple(target)
    current = field
    base = as_fraction(-1) - as_fraction(field.boundary_value)
    steps = []
    for k in range(1, n_loops + 1):
        height = base + k * as_fraction(r)
        try:
            region, inside = level_region(current, float(height), target)
        except NoLoopFound:
            if not steps:
                raise
            break
        orientation = Orientation.CLOCKWISE if inside > 0 else Orientation.COUNTERCLOCKWISE
        expected = BoundaryLedger.for_height(height).interior_value(orientation)
        mean = float(np.mean(current.grid[region & current.mask]))
        steps.append(LoopStep(k, orientation.value, float(expected), mean))
        if orientation is Orientation.CLOCKWISE:
            break
        current = restrict(current, region, float(expected))
    return steps


def _conditional_mean_report(records, r: float, stream: StreamId, n_runs: int, failures=()) -> McReport:
    report = ReportBuilder(
        "lattice.conditional_mean", "interior mean is -r (counterclockwise) or 2 - r (clockwise)", approximate=True
    )
    first = [steps[0] for steps in records if steps]
    clockwise = sum(1 for s in first if s.orientation == Orientation.CLOCKWISE.value)
    if first:
        report.proportion("P_first_clockwise", clockwise, len(first))
        z, _ = statistics.binomial_band(clockwise, len(first), r / 2)
        margin = abs(clockwise / len(first) - r / 2) - statistics.GATE_SIGMAS * math.sqrt(r / 2 * (1 - r / 2) / len(first))
        report.gate("first_clockwise_frequency", z, margin <= 0.05, hard=False)
    by_key = defaultdict(list)
    for steps in records:
        for s in steps:
            by_key[(s.index, s.orientation, s.expected)].append(s.interior_mean)
    for (k, orientation, expected), means in sorted(by_key.items()):
        observed = float(np.mean(means))
        name = f"mean_step{k}_{orientation}"
        report.estimate(name, means)
        relative = abs(observed - expected) / abs(expected) if expected else abs(observed)
        report.gate(f"{name}_within_15pct", relative, relative <= 0.15, hard=False)
    report.failures(failures)
    report.param("r", r)
    return report.build(stream, n_runs)


def conditional_mean_check(field_ensemble, r: float, n_loops: int = 1, *, rng_stream: StreamId | None = None) -> McReport:
    records, outcomes = [], []
    for i, field in enumerate(field_ensemble):
        try:
            records.append(conditional_means(field, r, n_loops))
        except NoLoopFound as e:
            outcomes.append(ReplicaOutcome(i, error=type(e).__name__, message=str(e)))
    stream = rng_stream or StreamId(field_ensemble[0].seed if field_ensemble else 0)
    return _conditional_mean_report(records, r, stream, len(field_ensemble), outcomes)


def _conditional_mean_replica(stream: StreamId, n: int, r: float, n_loops: int):
    return conditional_means(sample_dgff(n, 0.0, stream), r, n_loops)


def conditional_mean_experiment(
    n: int, n_fields: int, r: float, rng_stream: StreamId, *, n_loops: int = 1, workers: int = 1
) -> McReport:
    replica = partial(_conditional_mean_replica, n=n, r=r, n_loops=n_loops)
    outcomes = parallel_replicas(replica, rng_stream, n_fields, workers=workers)
    report = _conditional_mean_report([o.value for o in outcomes if o.ok], r, rng_stream, n_fields, outcomes)
    report.engine_params["lattice_n"] = n
    report.engine_params["green_scale"] = lattice_geometry(n).green_scale
    return report


def outward_regions(field: LatticeField, height: float, z) -> list[np.ndarray]:
    """Filled sign clusters around z, innermost first, until one reaches the boundary layer."""
    z = tuple(z)
    signs = _signs(field, height)
    labels = {s: ndimage.label(field.mask & (signs == s), structure=STRUCTURE)[0] for s in (1, -1)}
    cluster = labels[signs[z]] == labels[signs[z]][z]
    regions = []
    while True:
        filled = _fill(cluster, field.mask)
        regions.append(filled)
        if (cluster & field.boundary_layer).any():
            return regions
        ring = ndimage.binary_dilation(filled, structure=STRUCTURE) & ~filled & field.mask
        a, b = (int(i[0]) for i in np.nonzero(ring))
        sign = signs[a, b]
        cluster = labels[sign] == labels[sign][a, b]


@dataclass(frozen=True)
class MergeRecord:
    z1: tuple[int, int]
    z2: tuple[int, int]
    loops_z1: int
    loops_z2: int
    merge_index_z1: int | None
    merge_index_z2: int | None
    coincide: bool
    height: float


def merge_demo(field: LatticeField, z1, z2, r: float) -> MergeRecord:
    """Where the outward sequences around z1 and z2 join, and whether they agree from there on."""
    z1, z2 = tuple(z1), tuple(z2)
    for z in (z1, z2):
        if not field.mask[z]:
            raise ValueError(f"vertex {z} is outside the domain")
    height = -1.0 + r - field.boundary_value
    first, second = outward_regions(field, height, z1), outward_regions(field, height, z2)
    i = next((k for k, region in enumerate(first) if region[z2]), None)
    j = None
    if i is not None:
        j = next((k for k, region in enumerate(second) if np.array_equal(region, first[i])), None)
    coincide = False
    if i is not None and j is not None:
        tail1, tail2 = first[i:], second[j:]
        coincide = len(tail1) == len(tail2) and all(np.array_equal(a, b) for a, b in zip(tail1, tail2))
    return MergeRecord(
        z1, z2, len(first), len(second), None if i is None else i + 1, None if j is None else j + 1, coincide, height
    )


def _merge_replica(stream: StreamId, n: int, r: float) -> bool:
    field = sample_dgff(n, 0.0, stream)
    m = n // 2
    offset = max(n // 16, 1)
    return merge_demo(field, (m - offset, m), (m + offset, m), r).coincide


def merge_experiment(sizes, n_fields: int, r: float, rng_stream: StreamId, *, workers: int = 1) -> McReport:
    report = ReportBuilder("lattice.merge", "sequences toward two points coincide after separating", approximate=True)
    fractions = []
    for i, n in enumerate(sizes):
        outcomes = parallel_replicas(partial(_merge_replica, n=n, r=r), rng_stream.child(i), n_fields, workers=workers)
        hits = [o.value for o in outcomes if o.ok]
        fractions.append(sum(hits) / len(hits) if hits else float("nan"))
        report.proportion(f"coincide_fraction_n{n}", sum(hits), len(hits))
        report.failures(outcomes)
    if fractions:
        report.gate("coincide_fraction_floor", fractions[-1], fractions[-1] > 0.7, hard=False)
        trend = all(b >= a for a, b in zip(fractions, fractions[1:]))
        report.gate("coincide_fraction_nondecreasing", float(trend), trend, hard=False)
    report.param("r", r)
    return report.build(rng_stream, n_fields)


def _orientation_replica(stream: StreamId, n: int, height: float) -> str:
    return extract_level_loop(sample_dgff(n, 0.0, stream), height).orientation.value


def orientation_experiment(n: int, n_fields: int, rng_stream: StreamId, *, height: float = 0.0, workers: int = 1) -> McReport:
    outcomes = parallel_replicas(partial(_orientation_replica, n=n, height=height), rng_stream, n_fields, workers=workers)
    found = [o.value for o in outcomes if o.ok]
    clockwise = sum(1 for o in found if o == Orientation.CLOCKWISE.value)
    report = ReportBuilder("lattice.orientation", "P[clockwise] = (1 + u)/2 on the lattice", approximate=True)
    report.proportion("P_clockwise", clockwise, len(found))
    if found:
        frequency = clockwise / len(found)
        expected = clockwise_probability(height)
        report.gate("clockwise_band", frequency, abs(frequency - expected) <= 0.06, hard=False)
    report.failures(outcomes)
    report.param("lattice_n", n)
    report.param("height", height)
    return report.build(rng_stream, n_fields)


def validate_covariance(n: int, n_samples: int, rng_stream: StreamId) -> McReport:
    """Empirical covariance at a center and an offset vertex against exact Green's function entries."""
    geometry = lattice_geometry(n)
    center = geometry.shape.center
    offset = (center[0] + max(n // 8, 1), center[1])
    green = geometry.green_column(center)
    gen = rng_stream.generator()
    k_center, k_offset = geometry.index[center], geometry.index[offset]
    samples = np.array([geometry.sample_raw(gen)[[k_center, k_offset]] for _ in range(n_samples)])
    variance = float(np.var(samples[:, 0], ddof=1))
    covariance = float(np.cov(samples[:, 0], samples[:, 1])[0, 1])

    report = ReportBuilder("lattice.covariance", "sampled covariance equals the lattice Green's function", approximate=True)
    for name, observed, exact in (("variance_center", variance, green[center]), ("covariance_offset", covariance, green[offset])):
        relative = abs(observed - exact) / abs(exact)
        report.value(name, observed)
        report.value(f"{name}_exact", float(exact))
        report.gate(f"{name}_within_5pct", relative, relative <= 0.05, hard=False)
    statistic, normal = statistics.anderson_normal(samples[:, 0])
    report.gate("anderson_darling_center", statistic, normal, hard=False)
    report.value("green_scale", geometry.green_scale)
    report.param("lattice_n", n)
    return report.build(rng_stream, n_samples)


def center_variance_trend(sizes=(64, 128, 256)) -> tuple[list[float], float]:
    """Exact center variances and their slope against log n."""
    variances = [float(lattice_geometry(n).green_column(lattice_shape(n).center)[lattice_shape(n).center]) for n in sizes]
    slope = float(np.polyfit(np.log(np.asarray(sizes, dtype=float)), variances, 1)[0])
    return variances, slope


def markov_check(n: int, n_samples: int, rng_stream: StreamId) -> McReport:
    """Residual correlation across a separating ring after conditioning on the ring values."""
    geometry = lattice_geometry(n)
    shape = geometry.shape
    center = shape.center
    distance = np.abs(shape.positions - shape.positions[center])
    half = shape.radius / 2
    ring = shape.mask & (distance >= half - 0.5) & (distance < half + 0.5)
    outside_vertex = (center[0] + int(0.75 * shape.radius), center[1])
    ring_vertices = list(zip(*np.nonzero(ring)))
    columns = np.array([geometry.green_column(v)[ring] for v in ring_vertices])
    weights_in = np.linalg.solve(columns, geometry.green_column(center)[ring])
    weights_out = np.linalg.solve(columns, geometry.green_column(outside_vertex)[ring])

    gen = rng_stream.generator()
    ring_index = geometry.index[ring]
    residual_in, residual_out, raw_in, raw_out = [], [], [], []
    for _ in range(n_samples):
        x = geometry.sample_raw(gen)
        values = x[ring_index]
        a, b = x[geometry.index[center]], x[geometry.index[outside_vertex]]
        raw_in.append(a)
        raw_out.append(b)
        residual_in.append(a - weights_in @ values)
        residual_out.append(b - weights_out @ values)
    rho = float(np.corrcoef(residual_in, residual_out)[0, 1])
    z = rho * math.sqrt(n_samples)
    report = ReportBuilder("lattice.markov", "inside and outside are independent given a separating contour", approximate=True)
    report.value("residual_correlation", rho)
    report.value("raw_correlation", float(np.corrcoef(raw_in, raw_out)[0, 1]))
    report.gate("residual_uncorrelated", z, abs(z) <= statistics.GATE_SIGMAS, hard=False)
    report.param("lattice_n", n)
    report.param("ring_size", len(ring_vertices))
    return report.build(rng_stream, n_samples)


def dump_field(field: LatticeField, path: Path) -> None:
    """32-byte header {DGFF, n, boundary_value, seed, pad} then row-major float64 values."""
    header = np.zeros(1, dtype=DUMP_HEADER)
    header["magic"] = DUMP_MAGIC
    header["n"] = field.n
    header["boundary_value"] = field.boundary_value
    header["seed"] = field.seed
    with open(path, "wb") as f:
        f.write(header.tobytes())
        f.write(np.where(field.mask, field.grid, np.nan).astype("<f8").tobytes(order="C"))


def read_field(path: Path) -> LatticeField:
    raw = Path(path).read_bytes()
    header = np.frombuffer(raw[: DUMP_HEADER.itemsize], dtype=DUMP_HEADER)[0]
    if header["magic"] != DUMP_MAGIC:
        raise LatticeError(f"{path} is not a field dump")
    n = int(header["n"])
    grid = np.frombuffer(raw[DUMP_HEADER.itemsize :], dtype="<f8").reshape(n, n).copy()
    return LatticeField(grid, ~np.isnan(grid), float(header["boundary_value"]), n, int(header["seed"]))

