import json
import math
from fractions import Fraction

import pandas as pd
import pytest

from levelloop import crud
from levelloop.errors import HarnessError
from levelloop.services import archive, export
from levelloop.services.loewner import OrientedLoop, Orientation
from levelloop.services.rng import StreamId
from levelloop.services.sequences import upward_sequence
from levelloop.services.sle_driver import run_to_threshold, weights_from_height
from levelloop.services.statistics import ReportBuilder
from levelloop.services.whole_plane import ExteriorLoop


def _report(experiment_id, gates):
    builder = ReportBuilder(experiment_id, "anchor")
    for name, passed in gates.items():
        builder.gate(name, 0.1, passed)
    return builder.build(StreamId(4), 10)


def test_parquet_has_one_row_per_test(db, tmp_path):
    crud.add_report(db, _report("loop_laws.orientation", {"a": True, "b": False}))
    crud.add_report(db, _report("lattice.markov", {}))
    path = tmp_path / "archive" / "reports.parquet"
    assert archive.export_reports_parquet(db, path) == 3

    df = pd.read_parquet(path)
    assert list(df.columns) == archive.ARCHIVE_COLUMNS
    assert df["test"].tolist()[:2] == ["a", "b"]
    assert df["test"].isna().tolist() == [False, False, True]
    assert df["seed"].unique().tolist() == ["4"]


def test_import_into_an_empty_store(db, tmp_path):
    path = tmp_path / "reports.jsonl"
    lines = [_report("loop_laws.orientation", {"a": True}).to_json_line(), "{\"not\": \"a report\"}", ""]
    path.write_text("\n".join(lines))
    assert archive.import_reports_jsonl(path, db) == 1
    assert crud.count_reports(db) == 1
    with pytest.raises(HarnessError):
        archive.import_reports_jsonl(path, db)


def test_loops_frame():
    loops = [
        OrientedLoop.unit_circle(Orientation.COUNTERCLOCKWISE, Fraction(-1), n=16),
        OrientedLoop.unit_circle(Orientation.CLOCKWISE, Fraction(1, 2), n=8),
    ]
    df = export.loops_frame(loops)
    assert list(df.columns) == export.LOOP_COLUMNS
    assert len(df) == sum(loop.vertices.size for loop in loops)
    assert df.groupby("loop_id")["orientation"].first().tolist() == ["counterclockwise", "clockwise"]
    assert df["height_lambda"].unique().tolist() == [-1.0, 0.5]
    assert (df["frame"] == "disk").all()
    assert export.loops_frame([]).empty


def test_inverted_frame():
    circle = OrientedLoop.unit_circle(Orientation.COUNTERCLOCKWISE, Fraction(0), n=16)
    exterior = ExteriorLoop(circle, 0.5)
    plane = export.loops_frame([exterior])
    assert plane["orientation"].iloc[0] == "clockwise"
    assert plane["log_cr"].iloc[0] == pytest.approx(math.log(0.5))
    inverted = export.loops_frame([exterior], frame="inverted")
    assert inverted["orientation"].iloc[0] == "counterclockwise"
    with pytest.raises(ValueError):
        export.loops_frame([circle], frame="inverted")
    with pytest.raises(ValueError):
        export.loops_frame([circle], frame="sphere")


def test_sequence_json(stream, params, tmp_path):
    seq = upward_sequence(Fraction(1, 2), 0j, stream, params=params)
    path = export.write_sequence_json(seq, tmp_path / "sequence.json")
    record = json.loads(path.read_text())
    assert record["r"] == 0.5
    assert len(record["heights"]) == len(record["orientations"]) == len(record["log_cr"])
    assert record["frame"] == "disk"


def test_driver_csv_needs_a_recorded_path(stream, params, tmp_path):
    run = run_to_threshold(weights_from_height(0), 0.0, stream, params=params)
    with pytest.raises(ValueError):
        export.write_driver_csv(run, tmp_path / "driver.csv")
    recorded = run_to_threshold(weights_from_height(0), 0.0, stream, params=params, record_path=True)
    df = pd.read_csv(export.write_driver_csv(recorded, tmp_path / "driver.csv"))
    assert {"t", "w", "v_left", "v_right"} <= set(df.columns)


def test_svg_is_reproducible(tmp_path):
    loops = [
        OrientedLoop.unit_circle(Orientation.CLOCKWISE, Fraction(-1), n=32),
        OrientedLoop.unit_circle(Orientation.COUNTERCLOCKWISE, Fraction(1), n=32),
    ]
    a = export.plot_loops_svg(loops, tmp_path / "a.svg", "two circles")
    b = export.plot_loops_svg(loops, tmp_path / "b.svg", "two circles")
    assert a.read_text().startswith("<?xml")
    assert a.read_text() == b.read_text()
