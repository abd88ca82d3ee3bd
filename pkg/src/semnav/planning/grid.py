"""Timestamped local occupancy with dynamic-trail clearing.

Every update repaints the currently observed obstacle footprints and
frees the rest of the grid, with one exception: cells left behind by an
object classified dynamic stay occupied for clear_after seconds and then
clear, so a mover leaves a short-lived wake instead of a permanent wall.
Cells owned by static objects persist until something repaints them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

UNKNOWN = 0
FREE = 1
OCCUPIED = 2

DEFAULT_RESOLUTION_M = 0.2
DEFAULT_CLEAR_AFTER_S = 0.5


@dataclass(frozen=True)
class GridObstacle:
    """A footprint to paint: stable id plus a simple polygon of corners."""

    uid: int
    corners: tuple

    def __post_init__(self):
        pts = tuple((float(x), float(y)) for x, y in self.corners)
        if len(pts) < 3:
            raise ValueError("obstacle footprint needs at least 3 corners")
        object.__setattr__(self, "corners", pts)


def disc_offsets(radius_m: float, resolution: float) -> np.ndarray:
    """Integer (col, row) offsets covering a disc, for inflation tests."""
    if radius_m < 0.0:
        raise ValueError("radius must be non-negative")
    reach = int(math.ceil(radius_m / resolution))
    out = []
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            if math.hypot(di, dj) * resolution <= radius_m + 1e-12:
                out.append((di, dj))
    return np.array(out, dtype=np.int64)


class OccupancyGrid:
    def __init__(self, origin_x: float, origin_y: float, width: int, height: int,
                 resolution: float = DEFAULT_RESOLUTION_M):
        if resolution <= 0.0:
            raise ValueError("resolution must be positive")
        if width < 1 or height < 1:
            raise ValueError("grid must be at least 1x1 cells")
        self.origin_x = float(origin_x)
        self.origin_y = float(origin_y)
        self.width = int(width)
        self.height = int(height)
        self.resolution = float(resolution)
        self.state = np.full((height, width), UNKNOWN, dtype=np.uint8)
        self.stamp = np.full((height, width), -np.inf, dtype=np.float64)
        self.occupant = np.zeros((height, width), dtype=np.int64)

    @classmethod
    def around(cls, cx: float, cy: float, size_m: float,
               resolution: float = DEFAULT_RESOLUTION_M) -> "OccupancyGrid":
        """Square grid of side size_m centered on (cx, cy)."""
        cells = max(1, int(math.ceil(size_m / resolution)))
        half = cells * resolution / 2.0
        return cls(cx - half, cy - half, cells, cells, resolution)

    # -- coordinates -------------------------------------------------------

    def cell_of(self, x: float, y: float):
        i = int(math.floor((x - self.origin_x) / self.resolution))
        j = int(math.floor((y - self.origin_y) / self.resolution))
        return i, j

    def center_of(self, i: int, j: int):
        return (self.origin_x + (i + 0.5) * self.resolution,
                self.origin_y + (j + 0.5) * self.resolution)

    def contains(self, x: float, y: float) -> bool:
        i, j = self.cell_of(x, y)
        return 0 <= i < self.width and 0 <= j < self.height

    def blocked_mask(self) -> np.ndarray:
        """Anything not positively observed free blocks the planner."""
        return (self.state != FREE).astype(np.uint8)

    def free_fraction(self) -> float:
        return float(np.mean(self.state == FREE))

    def summary(self) -> dict:
        return {
            "origin": [self.origin_x, self.origin_y],
            "resolution": self.resolution,
            "size": [self.width, self.height],
            "free": int(np.sum(self.state == FREE)),
            "occupied": int(np.sum(self.state == OCCUPIED)),
            "unknown": int(np.sum(self.state == UNKNOWN)),
        }

    # -- painting ----------------------------------------------------------

    def _paint_polygon(self, corners, uid: int, t: float):
        """Scanline fill over cell centers, even-odd rule."""
        xs = [c[0] for c in corners]
        ys = [c[1] for c in corners]
        j0 = max(0, int(math.floor((min(ys) - self.origin_y) / self.resolution)))
        j1 = min(self.height - 1,
                 int(math.ceil((max(ys) - self.origin_y) / self.resolution)))
        n = len(corners)
        for j in range(j0, j1 + 1):
            cy = self.origin_y + (j + 0.5) * self.resolution
            crossings = []
            for k in range(n):
                x1, y1 = corners[k]
                x2, y2 = corners[(k + 1) % n]
                if (y1 <= cy < y2) or (y2 <= cy < y1):
                    crossings.append(x1 + (cy - y1) * (x2 - x1) / (y2 - y1))
            crossings.sort()
            for xa, xb in zip(crossings[::2], crossings[1::2]):
                lo = int(math.ceil((xa - self.origin_x) / self.resolution - 0.5))
                hi = int(math.floor((xb - self.origin_x) / self.resolution - 0.5))
                lo = max(lo, 0)
                hi = min(hi, self.width - 1)
                if lo <= hi:
                    self.state[j, lo:hi + 1] = OCCUPIED
                    self.stamp[j, lo:hi + 1] = t
                    self.occupant[j, lo:hi + 1] = uid

    def update(self, obstacles, dynamic_ids, t: float,
               clear_after: float = DEFAULT_CLEAR_AFTER_S):
        """One mapping tick; see the module docstring for the rules."""
        for obstacle in obstacles:
            self._paint_polygon(obstacle.corners, obstacle.uid, t)
        if dynamic_ids:
            stale = (self.state == OCCUPIED) & (self.stamp < t)
            trail = stale & np.isin(self.occupant, list(dynamic_ids))
            expired = trail & (t - self.stamp >= clear_after)
            self.state[expired] = FREE
        fresh = self.state != OCCUPIED
        self.state[fresh] = FREE
        self.stamp[fresh] = t
        self.occupant[fresh] = 0
        return self


def update_local_map(grid: OccupancyGrid, obstacles, dynamic_ids, t: float,
                     clear_after: float = DEFAULT_CLEAR_AFTER_S) -> OccupancyGrid:
    return grid.update(obstacles, dynamic_ids, t, clear_after)
