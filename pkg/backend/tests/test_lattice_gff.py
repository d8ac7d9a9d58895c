import numpy as np
import pytest

from levelloop.errors import LatticeError, NoLoopFound, SizeTooLarge
from levelloop.services import lattice_gff
from levelloop.services.lattice_gff import LatticeField
from levelloop.services.loewner import Orientation

N = 48


def first_success(fn, stream, attempts=30):
    """fn(field) on the first sampled field where a loop exists."""
    for replica in range(attempts):
        field = lattice_gff.sample_dgff(N, 0.0, stream.for_replica(replica))
        try:
            return field, fn(field)
        except NoLoopFound:
            continue
    pytest.fail(f"no level loop in {attempts} fields")


def test_size_limits():
    with pytest.raises(SizeTooLarge):
        lattice_gff.lattice_shape(lattice_gff.MAX_SIZE + 1)
    with pytest.raises(ValueError):
        lattice_gff.lattice_shape(8)


def test_shape():
    shape = lattice_gff.lattice_shape(N)
    assert shape.mask[shape.center]
    assert not shape.mask[0, 0]
    assert np.all(np.abs(shape.positions[shape.mask]) < shape.radius)


def test_sample_is_reproducible(stream):
    a = lattice_gff.sample_dgff(N, 0.0, stream)
    b = lattice_gff.sample_dgff(N, 0.0, stream)
    assert np.array_equal(a.grid, b.grid, equal_nan=True)
    assert np.all(np.isfinite(a.grid[a.mask]))
    assert np.all(np.isnan(a.grid[~a.mask]))
    assert a.seed == stream.seed
    with pytest.raises(ValueError):
        lattice_gff.sample_dgff(N, 0.0, None)


def test_boundary_value_shifts_the_field(stream):
    base = lattice_gff.sample_dgff(N, 0.0, stream)
    shifted = lattice_gff.sample_dgff(N, 0.25, stream)
    assert np.allclose(shifted.grid[base.mask], base.grid[base.mask] + 0.25)


def test_green_function_peaks_at_the_source():
    geometry = lattice_gff.lattice_geometry(N)
    center = geometry.shape.center
    column = geometry.green_column(center)
    assert column[center] == np.nanmax(column)
    assert np.all(column[geometry.shape.mask] > 0)
    assert geometry.green_scale > 0
    with pytest.raises(ValueError):
        geometry.green_column((0, 0))


def test_center_variance_grows_with_size():
    variances, slope = lattice_gff.center_variance_trend((32, 64))
    assert variances[1] > variances[0]
    assert slope > 0


def test_boundary_layer(stream):
    field = lattice_gff.sample_dgff(N, 0.0, stream)
    layer = field.boundary_layer
    assert layer.any()
    assert not (layer & ~field.mask).any()
    assert not layer[field.center]


def test_single_vertex_interface_is_a_hexagon():
    region = np.zeros((N, N), dtype=bool)
    m = N // 2
    region[m, m] = True
    trace = lattice_gff.trace_region_boundary(region)
    assert trace.size == 6
    assert np.allclose(np.abs(trace), 1 / np.sqrt(3))
    with pytest.raises(LatticeError):
        lattice_gff.trace_region_boundary(np.zeros((N, N), dtype=bool))


def test_constant_field_has_no_loop():
    shape = lattice_gff.lattice_shape(N)
    field = LatticeField(np.where(shape.mask, 0.5, np.nan), shape.mask, 0.0, N)
    with pytest.raises(NoLoopFound):
        lattice_gff.extract_level_loop(field, 0.0)


def test_extraction_arguments(stream):
    field = lattice_gff.sample_dgff(N, 0.0, stream)
    with pytest.raises(ValueError):
        lattice_gff.extract_level_loop(field, 1.0)
    with pytest.raises(ValueError):
        lattice_gff.extract_level_loop(field, 0.0, (0, 0))


def test_extracted_loop_surrounds_the_center(stream):
    field, loop = first_success(lambda f: lattice_gff.extract_level_loop(f, 0.0), stream)
    assert loop.orientation in (Orientation.CLOCKWISE, Orientation.COUNTERCLOCKWISE)
    assert loop.target == 0j
    assert loop.inradius > 0


def test_negated_field_flips_the_orientation(stream):
    field, loop = first_success(lambda f: lattice_gff.extract_level_loop(f, 0.0), stream)
    flipped = lattice_gff.extract_level_loop(field.negated(), 0.0)
    assert flipped.orientation is loop.orientation.flipped()
    assert flipped.log_cr == pytest.approx(loop.log_cr, abs=1e-2)


def test_reflected_field_keeps_the_orientation(stream):
    field, loop = first_success(lambda f: lattice_gff.extract_level_loop(f, 0.0), stream)
    reflected = lattice_gff.extract_level_loop(field.reflected(), 0.0)
    assert reflected.orientation is loop.orientation
    assert reflected.log_cr == pytest.approx(loop.log_cr, abs=1e-2)


def test_conditional_means_follow_the_ledger(stream):
    r = 0.5
    field, steps = first_success(lambda f: lattice_gff.conditional_means(f, r, 2), stream)
    assert steps[0].index == 1
    assert steps[0].expected in (-r, 2 - r)
    if steps[0].orientation == Orientation.CLOCKWISE.value:
        assert len(steps) == 1
        assert steps[0].expected == 2 - r


def test_restrict_keeps_values_inside(stream):
    field = lattice_gff.sample_dgff(N, 0.0, stream)
    region = np.zeros_like(field.mask)
    m = N // 2
    region[m - 3 : m + 4, m - 3 : m + 4] = True
    inner = lattice_gff.restrict(field, region, 0.5)
    assert inner.boundary_value == 0.5
    assert inner.mask.sum() == (region & field.mask).sum()
    assert np.array_equal(inner.grid[inner.mask], field.grid[inner.mask])


def test_merge_demo(stream):
    field = lattice_gff.sample_dgff(N, 0.0, stream)
    c = field.center
    same = lattice_gff.merge_demo(field, c, c, 0.5)
    assert same.coincide
    assert same.merge_index_z1 == 1
    with pytest.raises(ValueError):
        lattice_gff.merge_demo(field, c, (0, 0), 0.5)


def test_dump_round_trip(stream, tmp_path):
    field = lattice_gff.sample_dgff(N, 0.25, stream)
    path = tmp_path / "field.bin"
    lattice_gff.dump_field(field, path)
    assert path.stat().st_size == 32 + 8 * N * N
    loaded = lattice_gff.read_field(path)
    assert loaded.n == N
    assert loaded.boundary_value == 0.25
    assert loaded.seed == field.seed
    assert np.array_equal(loaded.mask, field.mask)
    assert np.array_equal(loaded.grid, field.grid, equal_nan=True)


def test_read_rejects_other_files(tmp_path):
    path = tmp_path / "noise.bin"
    path.write_bytes(b"XXXX" + bytes(28) + bytes(8 * 16 * 16))
    with pytest.raises(LatticeError):
        lattice_gff.read_field(path)


def test_covariance_report(stream):
    report = lattice_gff.validate_covariance(32, 200, stream)
    assert report.experiment_id == "lattice.covariance"
    assert report.approximate
    assert {"variance_center_within_5pct", "covariance_offset_within_5pct"} <= set(report.tests)
    assert all(not t.hard for t in report.tests.values())


def test_markov_report(stream):
    report = lattice_gff.markov_check(32, 50, stream)
    assert report.experiment_id == "lattice.markov"
    assert "residual_uncorrelated" in report.tests
    assert report.passed


@pytest.mark.slow
def test_lattice_orientation_is_balanced(stream):
    report = lattice_gff.orientation_experiment(64, 400, stream)
    assert report.tests["clockwise_band"].passed


def test_conditional_mean_check_counts_fields_without_loops(stream):
    shape = lattice_gff.lattice_shape(32)
    fields = [lattice_gff.sample_dgff(32, 0.0, stream.for_replica(i)) for i in range(6)]
    fields.append(LatticeField(np.where(shape.mask, 5.0, np.nan), shape.mask, 0.0, 32))
    report = lattice_gff.conditional_mean_check(fields, 0.5, 2, rng_stream=stream)
    assert report.experiment_id == "lattice.conditional_mean"
    assert report.approximate
    assert report.seeds.count == 7
    assert report.failures.get("NoLoopFound", 0) >= 1
    assert all(not t.hard for t in report.tests.values())
