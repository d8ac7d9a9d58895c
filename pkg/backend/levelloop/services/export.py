"""CSV, JSON and SVG artifacts for loops, sequences, towers and driver paths."""

import logging
from pathlib import Path

import matplotlib
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.schemas import SequenceRecord
from levelloop.services import conformal, continuum, lattice_gff, whole_plane
from levelloop.services.level_loops import as_fraction
from levelloop.services.loewner import Orientation
from levelloop.services.rng import StreamId
from levelloop.services.sequences import alternating_sequence
from levelloop.services.sle_driver import run_to_threshold, weights_from_height
from levelloop.services.whole_plane import ExteriorLoop

logger = logging.getLogger(__name__)

matplotlib.rcParams["svg.hashsalt"] = "levelloop"
LOOP_COLUMNS = ["loop_id", "vertex_index", "re", "im", "orientation", "height_lambda", "log_cr", "frame"]
ORIENTATION_COLORS = {Orientation.COUNTERCLOCKWISE: "tab:blue", Orientation.CLOCKWISE: "tab:red"}


def _loop_columns(loop, frame: str):
    """(vertices, orientation, log CR) of a disk loop or of an exterior loop in either frame."""
    if isinstance(loop, ExteriorLoop):
        if frame == "inverted":
            return np.asarray(loop.inverted_vertices), loop.loop.orientation, loop.loop.log_cr
        return np.asarray(loop.vertices), loop.orientation, loop.log_cr_infinity
    if frame == "inverted":
        raise ValueError("only exterior loops have an inverted frame")
    return np.asarray(loop.vertices), loop.orientation, loop.log_cr


def loops_frame(loops, frame: str = "disk") -> pd.DataFrame:
    """One row per vertex; `frame` is "disk" or "inverted" (the w = epsilon / z picture of exterior loops)."""
    if frame not in ("disk", "inverted"):
        raise ValueError(f"unknown frame {frame!r}")
    parts = []
    for loop_id, loop in enumerate(loops):
        vertices, orientation, log_cr = _loop_columns(loop, frame)
        parts.append(
            pd.DataFrame(
                {
                    "loop_id": loop_id,
                    "vertex_index": np.arange(vertices.size),
                    "re": vertices.real,
                    "im": vertices.imag,
                    "orientation": orientation.value,
                    "height_lambda": float(loop.height_lambda),
                    "log_cr": float(log_cr),
                    "frame": frame,
                }
            )
        )
    if not parts:
        return pd.DataFrame(columns=LOOP_COLUMNS)
    return pd.concat(parts, ignore_index=True)[LOOP_COLUMNS]


def write_loops_csv(loops, path: Path, frame: str = "disk") -> Path:
    loops_frame(loops, frame).to_csv(path, index=False)
    logger.debug(f"wrote {len(loops)} loops to {path}")
    return Path(path)


def sequence_record(seq, frame: str = "disk") -> SequenceRecord:
    return SequenceRecord(
        r=float(seq.r),
        heights=[float(h) for h in seq.heights],
        orientations=[o.value for o in seq.orientations],
        log_cr=list(seq.log_cr_index),
        transition_indices=list(seq.transition_indices),
        frame=frame,
    )


def write_sequence_json(seq, path: Path) -> Path:
    Path(path).write_text(sequence_record(seq).model_dump_json(indent=2))
    return Path(path)


def write_tower_json(tower, path: Path) -> Path:
    Path(path).write_text(tower.to_record().model_dump_json(indent=2))
    return Path(path)


def write_driver_csv(run, path: Path) -> Path:
    if run.path is None:
        raise ValueError("the driver run was not recorded; pass record_path=True")
    run.path.to_csv(path)
    return Path(path)


def plot_loops_svg(loops, path: Path, title: str | None = None) -> Path:
    """Nested loops colored by orientation, with one arrowhead per loop showing the direction."""
    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot()
    theta = np.linspace(0, 2 * np.pi, 257)
    ax.plot(np.cos(theta), np.sin(theta), color="0.6", lw=0.6)
    for loop in loops:
        vertices = np.asarray(loop.vertices)
        if (conformal.winding_number(vertices, loop.target) < 0) != (loop.orientation is Orientation.CLOCKWISE):
            vertices = vertices[::-1]
        color = ORIENTATION_COLORS[loop.orientation]
        ax.plot(vertices.real, vertices.imag, color=color, lw=0.8)
        i = vertices.size // 4
        tail, head = vertices[i], vertices[min(i + 2, vertices.size - 1)]
        ax.annotate(
            "",
            xy=(head.real, head.imag),
            xytext=(tail.real, tail.imag),
            arrowprops={"arrowstyle": "-|>", "color": color, "lw": 0.8},
        )
    ax.set_aspect("equal")
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(-1.05, 1.05)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    fig.savefig(path, format="svg", metadata={"Date": None})
    return Path(path)


def write_suite_artifacts(suite: str, out: Path, stream: StreamId, params: EngineParams = DEFAULT_PARAMS, r=0.5) -> list[Path]:
    """One illustrative run per suite, drawn from its own stream."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = as_fraction(r)
    written = []
    if suite in ("loop_laws", "all"):
        run = run_to_threshold(weights_from_height(0), 0.0, stream.child(0), params=params, record_path=True)
        written.append(write_driver_csv(run, out / "driver_path.csv"))
    if suite in ("sequence_laws", "all"):
        seq = alternating_sequence(r, 0j, None, stream.child(1), n_blocks=2, params=params)
        written.append(write_loops_csv(seq.loops, out / "sequence_loops.csv"))
        written.append(write_sequence_json(seq, out / "sequence.json"))
        written.append(plot_loops_svg(seq.loops, out / "sequence.svg", f"alternating sequence, r = {r}"))
    if suite in ("refinement", "continuum", "all"):
        tower = continuum.build_tower(1, 4, 0j, stream.child(2), params=params)
        written.append(write_tower_json(tower, out / "tower.json"))
    if suite in ("whole_plane", "all"):
        loops = whole_plane.exterior_sequence(0.25, r, 0.0, stream.child(3), params=params)
        written.append(write_loops_csv(loops, out / "exterior_loops.csv", frame="inverted"))
    if suite in ("lattice", "all"):
        field = lattice_gff.sample_dgff(64, 0.0, stream.child(4))
        path = out / "dgff_64.bin"
        lattice_gff.dump_field(field, path)
        written.append(path)
    logger.info(f"wrote {len(written)} artifacts to {out}")
    return written
