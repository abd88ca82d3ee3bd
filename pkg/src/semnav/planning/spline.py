"""Spline smoothing and heading assignment for planned polylines."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import accel
from ..geometry import wrap_angle
from .grid import OccupancyGrid, disc_offsets
from .rrt import InitialTrajectory

_MAX_SAMPLES = 8192


class DegenerateInput(ValueError):
    """All input points coincide; no curve direction exists."""


@dataclass(frozen=True)
class SplineParams:
    degree: int = 3
    samples: int = 64          # curve evaluated at samples + 1 points
    ds: float = 0.25           # max arc spacing between consecutive samples

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("degree must be >= 1")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.ds <= 0.0:
            raise ValueError("ds must be positive")


@dataclass(frozen=True)
class OrientedTrajectory:
    """Sampled smooth path: (x, y, z, heading) per point."""

    points: tuple
    fell_back: bool = False

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        if len(pts) < 2:
            raise ValueError("oriented trajectory needs at least two points")
        if any(len(p) != 4 for p in pts):
            raise ValueError("points are (x, y, z, heading)")
        object.__setattr__(self, "points", pts)

    def length(self) -> float:
        return sum(
            math.dist(a[:2], b[:2]) for a, b in zip(self.points, self.points[1:]))


def clamped_knots(n_ctrl: int, degree: int) -> np.ndarray:
    return np.concatenate([
        np.zeros(degree),
        np.linspace(0.0, 1.0, n_ctrl - degree + 1),
        np.ones(degree),
    ])


def _headings(xy: np.ndarray) -> np.ndarray:
    """Finite-difference directions: forward at the first sample, backward
    at the last, neighbor-to-neighbor in between. Zero-length differences
    inherit the previous heading."""
    m = xy.shape[0]
    out = np.empty(m)

    def angle_of(dx, dy, fallback):
        if abs(dx) < 1e-12 and abs(dy) < 1e-12:
            return fallback
        return math.atan2(dy, dx)
    out[0] = angle_of(xy[1, 0] - xy[0, 0], xy[1, 1] - xy[0, 1], 0.0)
    for i in range(1, m - 1):
        out[i] = angle_of(xy[i + 1, 0] - xy[i - 1, 0],
                          xy[i + 1, 1] - xy[i - 1, 1], out[i - 1])
    out[m - 1] = angle_of(xy[m - 1, 0] - xy[m - 2, 0],
                          xy[m - 1, 1] - xy[m - 2, 1], out[m - 2])
    return np.array([wrap_angle(a) for a in out])


def _collision_free(xy: np.ndarray, grid: OccupancyGrid, inflation_m: float) -> bool:
    blocked = grid.blocked_mask()
    disc = disc_offsets(inflation_m, grid.resolution)
    step = grid.resolution / 2.0
    for a, b in zip(xy[:-1], xy[1:]):
        if not accel.segment_free(blocked, grid.origin_x, grid.origin_y,
                                  grid.resolution, float(a[0]), float(a[1]),
                                  float(b[0]), float(b[1]), step, disc):
            return False
    return True


def _orient(points: np.ndarray, fell_back: bool) -> OrientedTrajectory:
    heading = _headings(points[:, :2])
    rows = tuple(
        (float(p[0]), float(p[1]), float(p[2]), float(h))
        for p, h in zip(points, heading))
    return OrientedTrajectory(rows, fell_back)


def smooth_bspline(initial: InitialTrajectory, params: SplineParams = None,
                   grid: OccupancyGrid = None,
                   inflation_m: float = 0.0) -> OrientedTrajectory:
    """Clamped B-spline through the polyline's control points.

    Degree drops to n-1 for short inputs. Sampling densifies until
    consecutive samples sit within ds of each other. When a grid is given
    and the smooth curve clips an obstacle, the original polyline is
    returned instead, flagged.
    """
    params = params or SplineParams()
    ctrl = np.asarray(initial.points, dtype=np.float64)
    if np.allclose(ctrl, ctrl[0], atol=1e-12):
        raise DegenerateInput("all trajectory points coincide")

    degree = min(params.degree, ctrl.shape[0] - 1)
    knots = clamped_knots(ctrl.shape[0], degree)
    m = params.samples
    while True:
        ts = np.linspace(0.0, 1.0, m + 1)
        curve = accel.bspline_eval(ctrl, knots, degree, ts)
        gaps = np.hypot(np.diff(curve[:, 0]), np.diff(curve[:, 1]))
        if float(gaps.max()) <= params.ds or m >= _MAX_SAMPLES:
            break
        m = min(m * 2, _MAX_SAMPLES)

    if grid is not None and not _collision_free(curve[:, :2], grid, inflation_m):
        return _orient(ctrl, fell_back=True)
    return _orient(curve, fell_back=False)
