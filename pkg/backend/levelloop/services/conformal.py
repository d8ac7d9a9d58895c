"""Polyline geometry and charge-simulation conformal maps.

Loops produced by the Loewner engine carry their own uniformizer. Loops that only
exist as polylines (circles in tests, lattice contours) are mapped with the method of
fundamental solutions: a harmonic function sum_j c_j log|x - y_j| + c_0 with sources
pushed off the curve is fitted to log|x - z| on the boundary. Its value at z is
log CR, and its conjugate gives the boundary correspondence.
"""

import logging

import numpy as np

logger = logging.getLogger(__name__)


def close_polyline(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=complex)
    if points.size and points[0] != points[-1]:
        points = np.append(points, points[0])
    return points


def winding_number(polyline: np.ndarray, point: complex) -> float:
    """Winding number of a closed polyline about `point` (not rounded)."""
    pts = close_polyline(polyline) - point
    if np.any(pts == 0):
        return float("nan")
    turns = np.angle(pts[1:] / pts[:-1])
    return float(turns.sum() / (2 * np.pi))


def contains(polyline: np.ndarray, point: complex) -> bool:
    w = winding_number(polyline, point)
    return bool(np.isfinite(w) and abs(w) > 0.5)


def signed_area(polyline: np.ndarray) -> float:
    pts = close_polyline(polyline)
    return 0.5 * float(np.sum(pts[:-1].real * pts[1:].imag - pts[1:].real * pts[:-1].imag))


def distance_to_polyline(polyline: np.ndarray, point: complex) -> float:
    pts = close_polyline(polyline)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = np.abs(ab) ** 2
    t = np.where(denom > 0, ((point - a) * np.conj(ab)).real / np.where(denom > 0, denom, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return float(np.min(np.abs(a + t * ab - point)))


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Symmetric Hausdorff distance between two vertex sets."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    d_ab = max(distance_to_polyline(b, p) for p in a) if b.size > 1 else float(np.max(np.abs(a - b[0])))
    d_ba = max(distance_to_polyline(a, p) for p in b) if a.size > 1 else float(np.max(np.abs(b - a[0])))
    return max(d_ab, d_ba)


def resample(polyline: np.ndarray, n: int) -> np.ndarray:
    """n points equally spaced in arclength along a closed polyline (open output)."""
    pts = close_polyline(polyline)
    seg = np.abs(np.diff(pts))
    keep = np.concatenate([[True], seg > 0])
    pts = pts[keep]
    seg = np.abs(np.diff(pts))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    targets = np.linspace(0.0, s[-1], n, endpoint=False)
    return np.interp(targets, s, pts.real) + 1j * np.interp(targets, s, pts.imag)


def self_crossings(polyline: np.ndarray, tol: float = 0.0) -> int:
    """Count proper crossings between non-adjacent segments."""
    pts = close_polyline(polyline)
    a, b = pts[:-1], pts[1:]
    n = a.size
    count = 0
    for i in range(n):
        p, r = a[i], b[i] - a[i]
        q, s = a[i + 2 :], b[i + 2 :] - a[i + 2 :]
        if i == 0:
            q, s = q[:-1], s[:-1]
        if q.size == 0:
            continue
        rxs = (np.conj(r) * s).imag
        qp = q - p
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (np.conj(qp) * s).imag / rxs
            u = (np.conj(qp) * r).imag / rxs
        hit = (rxs != 0) & (t > tol) & (t < 1 - tol) & (u > tol) & (u < 1 - tol)
        count += int(np.count_nonzero(hit))
    return count


class ChargeSimulationMap:
    """Normalized Riemann map of the interior of a closed polyline, seen from `center`."""

    def __init__(self, polyline: np.ndarray, center: complex, n_collocation: int = 256, offset: float = 2.0):
        self.center = complex(center)
        pts = close_polyline(polyline)
        if signed_area(pts) < 0:
            pts = pts[::-1]
        x = resample(pts, n_collocation)
        spacing = np.abs(np.roll(x, -1) - np.roll(x, 1)) / 2
        tangent = (np.roll(x, -1) - np.roll(x, 1)) / np.where(spacing > 0, 2 * spacing, 1.0)
        normal = -1j * tangent
        self.boundary = x
        self.sources = x + offset * spacing * normal

        matrix = np.column_stack([np.log(np.abs(x[:, None] - self.sources[None, :])), np.ones(x.size)])
        rhs = np.log(np.abs(x - self.center))
        solution, *_ = np.linalg.lstsq(matrix, rhs, rcond=None)
        self.charges = solution[:-1]
        self.constant = solution[-1]
        self.residual = float(np.max(np.abs(matrix @ solution - rhs)))
        logger.debug(f"charge simulation with {x.size} points, boundary residual {self.residual:.2e}")

    def harmonic(self, point: complex) -> float:
        return float(np.sum(self.charges * np.log(np.abs(point - self.sources))) + self.constant)

    @property
    def log_cr(self) -> float:
        """-log CR(inte; center)."""
        return -self.harmonic(self.center)

    def boundary_angles(self) -> np.ndarray:
        """Unwrapped arguments of the boundary collocation points under the normalized map."""
        x, y, z = self.boundary, self.sources, self.center
        arg_z = np.unwrap(np.angle(x - z))
        arg_src = np.unwrap(np.angle(x[:, None] - y[None, :]), axis=0)
        theta = arg_z - arg_src @ self.charges
        k0 = int(np.argmin(np.abs(x - z)))
        anchor = np.angle(x[k0] - z) - float(np.sum(self.charges * np.angle((x[k0] - y) / (z - y))))
        return theta - theta[k0] + anchor

    def boundary_samples(self, n: int) -> np.ndarray:
        """psi(e^{i theta_k}) for theta_k = 2 pi k / n."""
        theta = self.boundary_angles()
        x = np.append(self.boundary, self.boundary[0])
        theta = np.append(theta, theta[0] + 2 * np.pi)
        start = theta[0]
        targets = start + np.mod(2 * np.pi * np.arange(n) / n - start, 2 * np.pi)
        s = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(x)))])
        arclength = np.interp(targets, theta, s)
        return np.interp(arclength, s, x.real) + 1j * np.interp(arclength, s, x.imag)
