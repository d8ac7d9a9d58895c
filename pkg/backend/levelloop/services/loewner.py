"""Radial Loewner chains in the unit disk, targeted at the origin.

Step k of a chain is the exact flow of the radial Loewner equation

    d/dt g = g (e^{iW} + g) / (e^{iW} - g),   g'(0) = e^t,

with the driving angle held at `angle_k` for `duration_k`. In the rotated coordinate
u = e^{-iW} z this flow is f = J^{-1}(e^t J(u)) with J(u) = u / (1 + u)^2, so a chain
realizes a piecewise-constant driving function without integration error.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
from functools import cached_property

import numpy as np

from levelloop.config import DEFAULT_PARAMS
from levelloop.errors import AmbiguousWinding, ResolutionTooCoarse, SwallowedPoint, ViewpointOutside
from levelloop.services import conformal

logger = logging.getLogger(__name__)

TWO_PI = 2 * math.pi


def reduce_angle(angle: float) -> float:
    reduced = float(angle) % TWO_PI
    return 0.0 if reduced >= TWO_PI else reduced


@dataclass(frozen=True)
class RadialSlitStep:
    duration: float
    angle: float

    def __post_init__(self):
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise ValueError(f"slit duration must be positive and finite, got {self.duration}")
        object.__setattr__(self, "angle", reduce_angle(self.angle))


@dataclass(frozen=True, eq=False)
class LoewnerChain:
    durations: np.ndarray
    angles: np.ndarray

    def __post_init__(self):
        durations = np.array(self.durations, dtype=float).reshape(-1)
        angles = np.mod(np.array(self.angles, dtype=float).reshape(-1), TWO_PI)
        angles[angles >= TWO_PI] = 0.0
        if durations.shape != angles.shape:
            raise ValueError("durations and angles must have the same length")
        if durations.size and not np.all((durations > 0) & np.isfinite(durations)):
            raise ValueError("slit durations must be positive and finite")
        durations.setflags(write=False)
        angles.setflags(write=False)
        object.__setattr__(self, "durations", durations)
        object.__setattr__(self, "angles", angles)

    @classmethod
    def empty(cls) -> "LoewnerChain":
        return cls(np.empty(0), np.empty(0))

    def __len__(self) -> int:
        return int(self.durations.size)

    @property
    def steps(self) -> tuple[RadialSlitStep, ...]:
        return tuple(RadialSlitStep(float(d), float(a)) for d, a in zip(self.durations, self.angles))

    @cached_property
    def total_capacity(self) -> float:
        return math.fsum(self.durations.tolist())

    @cached_property
    def _rotations(self) -> np.ndarray:
        return np.exp(1j * self.angles)

    @cached_property
    def _growth(self) -> np.ndarray:
        return np.exp(self.durations)

    @cached_property
    def _shrink(self) -> np.ndarray:
        return np.exp(-self.durations)

    def concat(self, other: "LoewnerChain") -> "LoewnerChain":
        return LoewnerChain(
            np.concatenate([self.durations, other.durations]), np.concatenate([self.angles, other.angles])
        )

    def reflected(self) -> "LoewnerChain":
        """Chain of the complex-conjugate hull."""
        return LoewnerChain(self.durations.copy(), -self.angles)


def _slit(z: np.ndarray, rotation: complex, growth: float) -> np.ndarray:
    u = z * rotation.conjugate()
    w = growth * u / (1 + u) ** 2
    s = np.sqrt(1 - 4 * w)
    # 4w/(1+s)^2 equals (1-s)/(1+s) without the cancellation near u = 0
    return rotation * (4 * w / (1 + s) ** 2)


def _j_prime(u: np.ndarray) -> np.ndarray:
    return (1 - u) / (1 + u) ** 3


def slit_tip_radius(duration: float) -> float:
    """Distance from the origin to the tip of a radial slit of the given capacity."""
    return 1.0 / (math.sqrt(math.exp(duration)) + math.sqrt(math.expm1(duration))) ** 2


def apply_chain(chain: LoewnerChain, point, swallow_tol: float = DEFAULT_PARAMS.swallow_tol):
    """Forward image of `point` (scalar or array) under the composed chain."""
    z = np.atleast_1d(np.asarray(point, dtype=complex)).copy()
    scalar = np.ndim(point) == 0
    outside = 1 - np.abs(z) < swallow_tol
    if outside.any():
        raise SwallowedPoint(complex(z[np.argmax(outside)]), -1)
    original = z.copy()
    rotations, growth = chain._rotations, chain._growth
    for k in range(len(chain)):
        z = _slit(z, rotations[k], growth[k])
        near = 1 - np.abs(z) < swallow_tol
        if near.any():
            raise SwallowedPoint(complex(original[np.argmax(near)]), k)
    return complex(z[0]) if scalar else z


def inverse_chain(chain: LoewnerChain, point):
    """Preimage of `point` (scalar or array) under the composed chain."""
    z = np.atleast_1d(np.asarray(point, dtype=complex)).copy()
    scalar = np.ndim(point) == 0
    rotations, shrink = chain._rotations, chain._shrink
    for k in range(len(chain) - 1, -1, -1):
        z = _slit(z, rotations[k], shrink[k])
    return complex(z[0]) if scalar else z


def chain_derivative(chain: LoewnerChain, point: complex = 0j) -> complex:
    z = np.array([point], dtype=complex)
    derivative = 1.0 + 0j
    rotations, growth = chain._rotations, chain._growth
    for k in range(len(chain)):
        rotation = rotations[k]
        image = _slit(z, rotation, growth[k])
        u, f = z * rotation.conjugate(), image * rotation.conjugate()
        derivative *= complex(growth[k] * _j_prime(u)[0] / _j_prime(f)[0])
        z = image
    return derivative


def boundary_flow(chain: LoewnerChain, angles, sides=None) -> np.ndarray:
    """Push boundary points forward through the chain.

    A point sitting exactly at a slit base is a pair of prime ends; `sides` (+1 for the
    counterclockwise side, -1 for the clockwise side) says which one is meant.
    """
    theta = np.atleast_1d(np.asarray(angles, dtype=float)).copy()
    side = np.ones_like(theta) if sides is None else np.atleast_1d(np.asarray(sides, dtype=float))
    for k in range(len(chain)):
        base = chain.angles[k]
        rel = np.mod(theta - base + math.pi, TWO_PI) - math.pi
        sign = np.where(rel == 0, side, np.sign(rel))
        shrunk = math.exp(-chain.durations[k] / 2) * np.abs(np.cos(rel / 2))
        theta = base + sign * 2 * np.arccos(np.clip(shrunk, -1.0, 1.0))
    return np.mod(theta, TWO_PI)


def _tips(chain: LoewnerChain, index: np.ndarray) -> np.ndarray:
    """Tips of the slits at the sorted positions `index`, pulled back to the original disk."""
    tips = np.array([slit_tip_radius(chain.durations[k]) for k in index]) * chain._rotations[index]
    rotations, shrink = chain._rotations, chain._shrink
    for j in range(len(chain) - 1, -1, -1):
        start = int(np.searchsorted(index, j, side="right"))
        if start < index.size:
            tips[start:] = _slit(tips[start:], rotations[j], shrink[j])
    return tips


def extract_trace(chain: LoewnerChain, resolution: int) -> np.ndarray:
    """`resolution` points along the curve: its root, then tips at evenly spaced slits."""
    if resolution < 2:
        raise ResolutionTooCoarse(f"trace resolution must be at least 2, got {resolution}")
    if len(chain) == 0:
        raise ValueError("cannot extract a trace from an empty chain")
    index = np.round(np.linspace(0, len(chain) - 1, resolution - 1)).astype(int)
    return np.concatenate([[chain._rotations[0]], _tips(chain, index)])


def trace_at(chain: LoewnerChain, capacities) -> np.ndarray:
    """The root, then the tip at the end of the first slit reaching each capacity (nondecreasing)."""
    if len(chain) == 0:
        raise ValueError("cannot extract a trace from an empty chain")
    cumulative = np.cumsum(chain.durations)
    index = np.minimum(np.searchsorted(cumulative, np.asarray(capacities, dtype=float), side="left"), len(chain) - 1)
    return np.concatenate([[chain._rotations[0]], _tips(chain, index)])


def to_target_frame(points, target: complex):
    return (np.asarray(points) - target) / (1 - np.conj(target) * np.asarray(points))


def from_target_frame(points, target: complex):
    return (np.asarray(points) + target) / (1 + np.conj(target) * np.asarray(points))


@dataclass(frozen=True, eq=False)
class Uniformizer:
    """Normalized map from the interior of a loop onto the disk: disk automorphism, then chains."""

    chains: tuple[LoewnerChain, ...] = ()
    target: complex = 0j

    def extended(self, chain: LoewnerChain) -> "Uniformizer":
        return Uniformizer(self.chains + (chain,), self.target)

    def relative_to(self, ancestor: "Uniformizer") -> LoewnerChain:
        """Chain from the canonical disk of `ancestor` to this one; this uniformizer must extend it."""
        k = len(ancestor.chains)
        if (
            self.target != ancestor.target
            or len(self.chains) < k
            or any(a is not b for a, b in zip(self.chains, ancestor.chains))
        ):
            raise ValueError("uniformizer does not extend the given one")
        chain = LoewnerChain.empty()
        for step in self.chains[k:]:
            chain = chain.concat(step)
        return chain

    def common_ancestor(self, other: "Uniformizer") -> "Uniformizer":
        """Longest shared chain prefix of two uniformizers with the same target."""
        if self.target != other.target:
            raise ValueError("uniformizers toward different targets share no ancestor")
        k = 0
        for a, b in zip(self.chains, other.chains):
            if a is not b:
                break
            k += 1
        return Uniformizer(self.chains[:k], self.target)

    @cached_property
    def total_capacity(self) -> float:
        return math.fsum(c.total_capacity for c in self.chains)

    @property
    def log_cr(self) -> float:
        return self.total_capacity - math.log1p(-abs(self.target) ** 2)

    def forward(self, points):
        z = to_target_frame(points, self.target)
        for chain in self.chains:
            z = apply_chain(chain, z)
        return z

    def inverse(self, points):
        z = np.asarray(points, dtype=complex)
        for chain in reversed(self.chains):
            z = inverse_chain(chain, z)
        return from_target_frame(z, self.target)


class Orientation(str, Enum):
    CLOCKWISE = "clockwise"
    COUNTERCLOCKWISE = "counterclockwise"

    @property
    def sign(self) -> int:
        return 1 if self is Orientation.COUNTERCLOCKWISE else -1

    def flipped(self) -> "Orientation":
        return Orientation.CLOCKWISE if self is Orientation.COUNTERCLOCKWISE else Orientation.COUNTERCLOCKWISE

    @classmethod
    def from_winding(cls, winding: float) -> "Orientation":
        if not math.isfinite(winding):
            raise AmbiguousWinding(winding)
        if abs(winding - 1) <= 0.1:
            return cls.COUNTERCLOCKWISE
        if abs(winding + 1) <= 0.1:
            return cls.CLOCKWISE
        raise AmbiguousWinding(winding)


@dataclass(frozen=True, eq=False)
class OrientedLoop:
    """A simple loop around `target`, stored lazily.

    Engine loops keep the uniformizer of their interior and the circle angles whose
    preimages trace the loop; the vertices are only computed on access. Loops known
    only as polylines keep the vertices directly. Equality is identity.
    """

    orientation: Orientation
    height_lambda: Fraction | float
    log_cr: float
    target: complex = 0j
    uniformizer: Uniformizer | None = None
    boundary_angles: np.ndarray | None = None
    polyline: np.ndarray | None = None
    inset: float = DEFAULT_PARAMS.boundary_inset

    @classmethod
    def from_uniformizer(
        cls,
        uniformizer: Uniformizer,
        boundary_angles: np.ndarray,
        orientation: Orientation,
        height_lambda,
        inset: float = DEFAULT_PARAMS.boundary_inset,
    ) -> "OrientedLoop":
        return cls(
            orientation=orientation,
            height_lambda=height_lambda,
            log_cr=uniformizer.log_cr,
            target=uniformizer.target,
            uniformizer=uniformizer,
            boundary_angles=np.asarray(boundary_angles, dtype=float),
            inset=inset,
        )

    @classmethod
    def from_polyline(cls, vertices, target: complex = 0j, height_lambda=0.0, n_collocation: int = 256):
        vertices = conformal.close_polyline(vertices)
        orientation = Orientation.from_winding(conformal.winding_number(vertices, target))
        mapping = conformal.ChargeSimulationMap(vertices, target, n_collocation=n_collocation)
        return cls(
            orientation=orientation,
            height_lambda=height_lambda,
            log_cr=mapping.log_cr,
            target=complex(target),
            polyline=vertices,
        )

    @classmethod
    def unit_circle(cls, orientation: Orientation, height_lambda, target: complex = 0j, n: int = 256):
        angles = np.linspace(0.0, TWO_PI, n, endpoint=False)
        if orientation is Orientation.CLOCKWISE:
            angles = -angles
        return cls(
            orientation=orientation,
            height_lambda=height_lambda,
            log_cr=-math.log1p(-abs(target) ** 2),
            target=complex(target),
            uniformizer=Uniformizer((), complex(target)),
            boundary_angles=angles,
            inset=0.0,
        )

    @cached_property
    def vertices(self) -> np.ndarray:
        if self.polyline is not None:
            return conformal.close_polyline(self.polyline)
        circle = (1 - self.inset) * np.exp(1j * self.boundary_angles)
        return conformal.close_polyline(self.uniformizer.inverse(circle))

    @cached_property
    def inradius(self) -> float:
        return conformal.distance_to_polyline(self.vertices, self.target)

    @cached_property
    def outradius(self) -> float:
        return float(np.max(np.abs(self.vertices - self.target)))

    @property
    def conformal_radius(self) -> float:
        return math.exp(-self.log_cr)

    def relabel(self, height_lambda) -> "OrientedLoop":
        """Same trace and uniformizer under another height label."""
        return replace(self, height_lambda=height_lambda)

    def riemann_boundary(self, n: int) -> np.ndarray:
        """psi(e^{2 pi i k / n}) for the normalized Riemann map psi of the interior."""
        theta = TWO_PI * np.arange(n) / n
        if self.uniformizer is not None:
            return self.uniformizer.inverse((1 - self.inset) * np.exp(1j * theta))
        return conformal.ChargeSimulationMap(self.vertices, self.target).boundary_samples(n)


def conformal_radius(loop: OrientedLoop) -> float:
    return loop.conformal_radius


def caratheodory_distance(a: OrientedLoop, b: OrientedLoop, viewpoint: str = "target", n_samples: int = 128) -> float:
    """|log CR difference| plus the sup distance between normalized Riemann-map boundary samples."""
    if a is b:
        return 0.0
    if a.target != b.target:
        raise ValueError("loops must share the reference point")
    for loop in (a, b):
        if not conformal.contains(loop.vertices, loop.target):
            raise ViewpointOutside(f"{loop.target} is not surrounded by the loop")
    if viewpoint == "target":
        gap = abs(a.log_cr - b.log_cr)
        return gap + float(np.max(np.abs(a.riemann_boundary(n_samples) - b.riemann_boundary(n_samples))))
    if viewpoint == "infinity":
        logs, samples = [], []
        mirror = (-np.arange(n_samples)) % n_samples
        for loop in (a, b):
            mapping = conformal.ChargeSimulationMap(1 / (loop.vertices - loop.target), 0j)
            logs.append(-mapping.log_cr)
            samples.append(loop.target + 1 / mapping.boundary_samples(n_samples)[mirror])
        return abs(logs[0] - logs[1]) + float(np.max(np.abs(samples[0] - samples[1])))
    raise ValueError(f"unknown viewpoint {viewpoint!r}")
