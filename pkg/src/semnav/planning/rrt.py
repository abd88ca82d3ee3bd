"""Sampling-based initial path over the occupancy grid.

Standard RRT* loop with goal biasing; once a first solution exists,
sampling is confined to the prolate spheroid whose foci are the start
and goal and whose major axis equals the best cost so far, so later
iterations only explore where a better path could possibly lie.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import accel
from .grid import OccupancyGrid, disc_offsets


class NoPathFound(RuntimeError):
    """Iteration budget exhausted without reaching the goal."""


class StartOrGoalOccupied(ValueError):
    """An endpoint is blocked after inflation."""


@dataclass(frozen=True)
class RrtParams:
    max_iters: int = 2000
    step_m: float = 1.0
    goal_bias: float = 0.1
    inflation_m: float = 0.3
    neighbor_radius_m: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_m <= 0.0:
            raise ValueError("step_m must be positive")
        if not (0.0 <= self.goal_bias < 1.0):
            raise ValueError("goal_bias must lie in [0, 1)")
        if self.inflation_m < 0.0:
            raise ValueError("inflation_m must be non-negative")
        if self.neighbor_radius_m < self.step_m:
            raise ValueError("neighbor_radius_m must be >= step_m")


@dataclass(frozen=True)
class InitialTrajectory:
    """Collision-free polyline from the sampling planner."""

    points: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        if len(pts) < 2:
            raise ValueError("trajectory needs at least two points")
        if any(len(p) != 3 for p in pts):
            raise ValueError("trajectory points are (x, y, z) meters")
        object.__setattr__(self, "points", pts)

    def length(self) -> float:
        return sum(
            math.dist(a[:2], b[:2]) for a, b in zip(self.points, self.points[1:]))


@dataclass
class RrtReport:
    iterations: int = 0
    tree_size: int = 0
    solved: bool = False
    # (iteration, cost) recorded whenever the incumbent improves
    best_costs: list = field(default_factory=list)


def _ellipse_sample(rng, start, goal, c_best):
    """Uniform draw from the informed region for the current best cost."""
    sx, sy = start
    gx, gy = goal
    c_min = math.hypot(gx - sx, gy - sy)
    a = c_best / 2.0
    b = math.sqrt(max(c_best * c_best - c_min * c_min, 0.0)) / 2.0
    angle = math.atan2(gy - sy, gx - sx)
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    theta = 2.0 * math.pi * rng.random()
    radius = math.sqrt(rng.random())
    ex = radius * math.cos(theta) * a
    ey = radius * math.sin(theta) * b
    cx, cy = (sx + gx) / 2.0, (sy + gy) / 2.0
    return (cx + ex * cos_a - ey * sin_a, cy + ex * sin_a + ey * cos_a)


def plan_rrt(start, goal, grid: OccupancyGrid, params: RrtParams = None):
    """Returns (InitialTrajectory, RrtReport); raises when blocked."""
    params = params or RrtParams()
    rng = np.random.default_rng(params.seed)
    blocked = grid.blocked_mask()
    disc = disc_offsets(params.inflation_m, grid.resolution)
    ox, oy, res = grid.origin_x, grid.origin_y, grid.resolution
    seg_step = res / 2.0

    sx, sy = float(start[0]), float(start[1])
    gx, gy = float(goal[0]), float(goal[1])
    z = float(start[2]) if len(start) > 2 else 0.0
    ends = np.array([[sx, sy], [gx, gy]])
    ok = accel.points_free(blocked, ox, oy, res, ends, disc)
    if not bool(ok[0]):
        raise StartOrGoalOccupied("start is blocked after inflation")
    if not bool(ok[1]):
        raise StartOrGoalOccupied("goal is blocked after inflation")

    def seg_free(ax, ay, bx, by):
        return accel.segment_free(blocked, ox, oy, res, ax, ay, bx, by,
                                  seg_step, disc)

    cap = params.max_iters + 1
    xs = np.empty(cap)
    ys = np.empty(cap)
    parent = np.full(cap, -1, dtype=np.int64)
    cost = np.full(cap, np.inf)
    xs[0], ys[0], cost[0] = sx, sy, 0.0
    n = 1

    x_hi = ox + grid.width * res
    y_hi = oy + grid.height * res
    goal_links = []  # (node index, straight distance to goal)
    best_value = math.inf
    report = RrtReport()

    for it in range(1, params.max_iters + 1):
        report.iterations = it
        if rng.random() < params.goal_bias:
            tx, ty = gx, gy
        elif best_value < math.inf:
            for _ in range(16):
                tx, ty = _ellipse_sample(rng, (sx, sy), (gx, gy), best_value)
                if ox <= tx < x_hi and oy <= ty < y_hi:
                    break
            else:
                tx = ox + rng.random() * grid.width * res
                ty = oy + rng.random() * grid.height * res
        else:
            tx = ox + rng.random() * grid.width * res
            ty = oy + rng.random() * grid.height * res

        d2 = accel.dist2_array(xs, ys, n, tx, ty)
        near = int(np.argmin(d2))
        dist = math.sqrt(float(d2[near]))
        if dist < 1e-9:
            continue
        scale = min(1.0, params.step_m / dist)
        nx = xs[near] + (tx - xs[near]) * scale
        ny = ys[near] + (ty - ys[near]) * scale
        if not accel.points_free(blocked, ox, oy, res, np.array([[nx, ny]]), disc)[0]:
            continue

        # choose the cheapest feasible parent among nearby nodes
        nd2 = accel.dist2_array(xs, ys, n, nx, ny)
        radius2 = params.neighbor_radius_m ** 2
        neighbors = np.nonzero(nd2 <= radius2)[0]
        best_parent = -1
        best_cost = math.inf
        for idx in neighbors:
            through = cost[idx] + math.sqrt(float(nd2[idx]))
            if through < best_cost and seg_free(xs[idx], ys[idx], nx, ny):
                best_parent = int(idx)
                best_cost = through
        if best_parent < 0:
            if not seg_free(xs[near], ys[near], nx, ny):
                continue
            best_parent = near
            best_cost = cost[near] + dist * scale
        node = n
        xs[node], ys[node] = nx, ny
        parent[node] = best_parent
        cost[node] = best_cost
        n += 1

        # rewire: adopt the new node as parent where it shortens paths
        for idx in neighbors:
            through = cost[node] + math.sqrt(float(nd2[idx]))
            if through + 1e-12 < cost[idx] and seg_free(nx, ny, xs[idx], ys[idx]):
                parent[idx] = node
                cost[idx] = through

        goal_dist = math.hypot(gx - nx, gy - ny)
        if goal_dist <= params.step_m and seg_free(nx, ny, gx, gy):
            goal_links.append((node, goal_dist))

        if goal_links:
            value = min(cost[i] + d for i, d in goal_links)
            if value < best_value - 1e-12:
                best_value = value
                report.best_costs.append((it, float(value)))

    report.tree_size = n
    if not goal_links:
        raise NoPathFound(f"no path after {params.max_iters} iterations")

    report.solved = True
    tail = min(goal_links, key=lambda link: (cost[link[0]] + link[1], link[0]))
    chain = [tail[0]]
    while parent[chain[-1]] >= 0:
        chain.append(int(parent[chain[-1]]))
    chain.reverse()
    pts = [(float(xs[i]), float(ys[i]), z) for i in chain]
    if (gx, gy) != (pts[-1][0], pts[-1][1]):
        pts.append((gx, gy, z))
    return InitialTrajectory(tuple(pts)), report


def informed_rrt_star(start, goal, grid: OccupancyGrid,
                      params: RrtParams = None) -> InitialTrajectory:
    trajectory, _ = plan_rrt(start, goal, grid, params)
    return trajectory
