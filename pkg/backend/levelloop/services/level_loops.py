"""Single level loops: closing a driver run into an oriented loop, and the boundary ledger.

A loop at height u (lambda units) carries the boundary value -1 - u on its left and
1 - u on its right. A counterclockwise loop has its interior on the left, a clockwise
loop on the right.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

from levelloop.config import DEFAULT_PARAMS, EngineParams
from levelloop.errors import LedgerError
from levelloop.services import conformal
from levelloop.services.loewner import (
    TWO_PI,
    Orientation,
    OrientedLoop,
    Uniformizer,
    boundary_flow,
    inverse_chain,
)
from levelloop.services.rng import StreamId
from levelloop.services.sle_driver import ThresholdRun, run_to_threshold, weights_from_height

logger = logging.getLogger(__name__)

ORIENTATION_SAMPLES = 64


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(str(value))


class Side(str, Enum):
    INSIDE_LEFT = "inside_left"
    INSIDE_RIGHT = "inside_right"

    @classmethod
    def of(cls, orientation: Orientation) -> "Side":
        return cls.INSIDE_LEFT if orientation is Orientation.COUNTERCLOCKWISE else cls.INSIDE_RIGHT


@dataclass(frozen=True)
class BoundaryLedger:
    left_value: Fraction
    right_value: Fraction

    def __post_init__(self):
        left, right = as_fraction(self.left_value), as_fraction(self.right_value)
        if right - left != 2:
            raise LedgerError(f"ledger gap {right - left} differs from 2")
        object.__setattr__(self, "left_value", left)
        object.__setattr__(self, "right_value", right)

    @classmethod
    def for_height(cls, height) -> "BoundaryLedger":
        height = as_fraction(height)
        return cls(-1 - height, 1 - height)

    def value_on(self, side: Side) -> Fraction:
        return self.left_value if side is Side.INSIDE_LEFT else self.right_value

    def interior_value(self, orientation: Orientation) -> Fraction:
        return self.value_on(Side.of(orientation))


def effective_height(requested_height, ledger: BoundaryLedger, side: Side) -> Fraction:
    return as_fraction(requested_height) + ledger.value_on(side)


def orientation_of(trace: np.ndarray, target: complex = 0j) -> Orientation:
    return Orientation.from_winding(conformal.winding_number(trace, target))


def _arc_offsets(run: ThresholdRun, n: int) -> tuple[float, int, np.ndarray]:
    """Start angle, direction and angular offsets of the circle traversal for a closed run.

    The traversal starts at the image of the seed prime end on the dominant side and
    runs along the dominant arc first. Extra offsets land inside the two short arcs so
    the loop visits the other side of the curve and the surviving piece of the circle.
    """
    chain = run.chain
    v_left, v_right = boundary_flow(chain, [run.seed_angle, run.seed_angle], [-1.0, 1.0])
    w = chain.angles[-1]
    gap_left = (w - v_left) % TWO_PI
    gap_right = (v_right - w) % TWO_PI
    if run.right_dominant:
        start, direction, major, minor = v_right, -1, gap_right, gap_left
    else:
        start, direction, major, minor = v_left, 1, gap_left, gap_right
    rest = TWO_PI - major - minor
    extras = [major, major + 0.5 * minor, major + minor, major + minor + 0.5 * rest]
    extras = [e for e in extras if 0 < e < TWO_PI]
    offsets = np.unique(np.concatenate([np.linspace(0.0, TWO_PI, n, endpoint=False), extras]))
    return float(start), direction, offsets


def closing_angles(run: ThresholdRun, n: int) -> np.ndarray:
    start, direction, offsets = _arc_offsets(run, n)
    return start + direction * offsets


def close_level_loop(
    run: ThresholdRun,
    height_lambda,
    parent: Uniformizer | None = None,
    target: complex = 0j,
    params: EngineParams = DEFAULT_PARAMS,
) -> OrientedLoop:
    """Turn a finished driver run into a loop inside the domain uniformized by `parent`."""
    angles = closing_angles(run, ORIENTATION_SAMPLES)
    canonical = inverse_chain(run.chain, (1 - params.boundary_inset) * np.exp(1j * angles))
    orientation = orientation_of(canonical, 0j)
    parent = parent if parent is not None else Uniformizer((), complex(target))
    return OrientedLoop.from_uniformizer(
        parent.extended(run.chain),
        closing_angles(run, params.loop_resolution),
        orientation,
        height_lambda,
        inset=params.boundary_inset,
    )


def sample_level_loop(
    effective_height,
    target: complex = 0j,
    rng_stream: StreamId | None = None,
    *,
    seed_angle: float = 0.0,
    params: EngineParams = DEFAULT_PARAMS,
    mirror: bool = False,
) -> OrientedLoop:
    if not abs(target) < 1:
        raise ValueError(f"target {target} is not in the open unit disk")
    weights = weights_from_height(effective_height)
    run = run_to_threshold(weights, seed_angle, rng_stream, params=params, mirror=mirror)
    loop = close_level_loop(run, as_fraction(effective_height), target=target, params=params)
    logger.debug(f"level loop at height {effective_height}: {loop.orientation.value}, log CR {loop.log_cr:.4f}")
    return loop


def touches_boundary(loop: OrientedLoop, params: EngineParams = DEFAULT_PARAMS) -> bool:
    return float(np.min(1 - np.abs(loop.vertices))) < 5 * params.trace_tol


def clockwise_probability(height) -> float:
    return (1 + float(height)) / 2


def log_cr_offset(target: complex) -> float:
    return -math.log1p(-abs(target) ** 2)
