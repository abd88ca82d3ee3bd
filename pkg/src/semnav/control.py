"""Reference tracking under moving-obstacle safety margins.

The tracker follows a windowed reference with a unicycle model. Each
obstacle contributes per-step disc constraints tying consecutive barrier
values together, so the margin may shrink only geometrically; the solve
runs an augmented-Lagrangian outer loop around a projected-gradient
inner loop with analytic derivatives from the accel kernels. Input
bounds hold exactly by projection at every iterate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import accel
from .geometry import wrap_angle


class Infeasible(RuntimeError):
    """Constraint violation stayed above tolerance; callers should brake."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class BadReference(ValueError):
    """Reference window too short or non-finite."""


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    z: float = 0.0
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(float(self.heading)))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.heading])

    @classmethod
    def from_array(cls, a) -> "RobotState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class Control:
    v: float
    omega: float


BRAKE = Control(0.0, 0.0)


@dataclass(frozen=True)
class BarrierSpec:
    """Per-obstacle predicted centers over the horizon plus safety
    distances and the per-step decay rate. radii, when given, assigns
    each obstacle its own clearance; otherwise d_safe is shared."""

    predictions: np.ndarray      # (n_obs, horizon+1, 2)
    d_safe: float = 1.0
    decay: float = 0.2
    radii: np.ndarray = None     # optional (n_obs,)

    def __post_init__(self):
        preds = np.asarray(self.predictions, dtype=np.float64)
        if preds.size == 0:
            preds = preds.reshape((0, 0, 2)) if preds.ndim != 3 else preds
        if preds.ndim != 3 or preds.shape[2] != 2:
            raise ValueError("predictions must be (n_obs, steps, 2)")
        if self.d_safe <= 0.0:
            raise ValueError("d_safe must be positive")
        if not (0.0 < self.decay <= 1.0):
            raise ValueError("decay must lie in (0, 1]")
        if self.radii is not None:
            radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
            if radii.shape[0] != preds.shape[0]:
                raise ValueError("radii must give one distance per obstacle")
            if not np.all(np.isfinite(radii)) or np.any(radii <= 0.0):
                raise ValueError("radii must be finite and positive")
            object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "predictions", preds)

    @classmethod
    def empty(cls, d_safe: float = 1.0, decay: float = 0.2) -> "BarrierSpec":
        return cls(np.zeros((0, 0, 2)), d_safe, decay)

    @classmethod
    def from_tracks(cls, tracks, horizon: int, dt: float,
                    d_safe: float = 1.0, decay: float = 0.2) -> "BarrierSpec":
        """Constant-velocity extrapolation of (x, y, vx, vy) rows."""
        rows = list(tracks)
        if not rows:
            return cls.empty(d_safe, decay)
        preds = np.empty((len(rows), horizon + 1, 2))
        ks = np.arange(horizon + 1)
        for i, (x, y, vx, vy) in enumerate(rows):
            preds[i, :, 0] = x + vx * ks * dt
            preds[i, :, 1] = y + vy * ks * dt
        return cls(preds, d_safe, decay)

    def count(self) -> int:
        return self.predictions.shape[0]


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    dt: float = 0.1
    q: tuple = (2.0, 2.0, 0.0, 0.3)
    r: tuple = (0.1, 0.05)
    v_limits: tuple = (-0.5, 2.0)
    w_limits: tuple = (-1.5, 1.5)
    kkt_tol: float = 1e-4
    max_outer: int = 12
    max_inner: int = 120
    penalty_init: float = 10.0
    penalty_growth: float = 5.0

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if len(self.q) != 4 or any(w < 0.0 for w in self.q):
            raise ValueError("q must be 4 non-negative weights")
        if len(self.r) != 2 or any(w <= 0.0 for w in self.r):
            raise ValueError("r must be 2 positive weights")
        if self.v_limits[0] >= self.v_limits[1] or self.w_limits[0] >= self.w_limits[1]:
            raise ValueError("limits must be (low, high) with low < high")
        if self.kkt_tol <= 0.0:
            raise ValueError("kkt_tol must be positive")


@dataclass
class SolverReport:
    outer_rounds: int = 0
    evaluations: int = 0
    cost: float = math.inf
    augmented: float = math.inf
    max_violation: float = 0.0
    feasible: bool = False
    warm_started: bool = False
    controls: np.ndarray = None     # optimized (horizon, 2), for warm starts


def dynamics_step(state: RobotState, control: Control, dt: float) -> RobotState:
    """One unicycle step; heading stays in (-pi, pi]."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return RobotState(
        state.x + dt * control.v * math.cos(state.heading),
        state.y + dt * control.v * math.sin(state.heading),
        state.z,
        state.heading + dt * control.omega,
    )


def barrier_value(state: RobotState, obstacle_xy, d_safe: float) -> float:
    """Squared clearance beyond the safety disc: positive outside, zero on
    the boundary, negative inside."""
    dx = state.x - float(obstacle_xy[0])
    dy = state.y - float(obstacle_xy[1])
    return dx * dx + dy * dy - d_safe * d_safe


def _project(us: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    out = us.copy()
    np.clip(out[:, 0], cfg.v_limits[0], cfg.v_limits[1], out=out[:, 0])
    np.clip(out[:, 1], cfg.w_limits[0], cfg.w_limits[1], out=out[:, 1])
    return out


def _inner_descent(x0a, us, refs, obs, ds2, lam, mu, rho, cfg, report):
    """Projected gradient with Barzilai-Borwein steps and a proximal
    sufficient-decrease backtrack."""
    qd = np.asarray(cfg.q, dtype=np.float64)
    rd = np.asarray(cfg.r, dtype=np.float64)
    value, cost, grad, cons = accel.nmpc_value_grad(
        x0a, us, cfg.dt, refs, qd, rd, obs, ds2, lam, mu, rho)
    report.evaluations += 1
    prev_us = None
    prev_grad = None
    step = 1.0 / (float(np.abs(grad).max()) + 1.0)
    for _ in range(cfg.max_inner):
        if prev_us is not None:
            s = us - prev_us
            yv = grad - prev_grad
            sy = float(np.sum(s * yv))
            if sy > 1e-12:
                step = float(np.sum(s * s)) / sy
        step = min(max(step, 1e-7), 100.0)

        t = step
        moved = False
        for _ in range(30):
            cand = _project(us - t * grad, cfg)
            dx = cand - us
            norm2 = float(np.sum(dx * dx))
            if norm2 <= 1e-22:
                break
            v2, c2, g2, k2 = accel.nmpc_value_grad(
                x0a, cand, cfg.dt, refs, qd, rd, obs, ds2, lam, mu, rho)
            report.evaluations += 1
            if v2 <= value + float(np.sum(grad * dx)) + 0.5 / t * norm2:
                prev_us, prev_grad = us, grad
                us, value, cost, grad, cons = cand, v2, c2, g2, k2
                moved = True
                break
            t *= 0.5
        if not moved:
            break
        resid = us - _project(us - grad, cfg)
        if float(np.abs(resid).max()) <= 0.1 * cfg.kkt_tol:
            break
    return us, value, cost, grad, cons


def solve_nmpc(x0: RobotState, reference, barriers: BarrierSpec = None,
               cfg: MpcConfig = None, warm_start: np.ndarray = None):
    """Returns (first control, predicted states (N+1, 4), SolverReport).

    The reference is a sequence of at least horizon rows (x, y, z,
    heading); extra rows are ignored. Raises Infeasible when the barrier
    constraints cannot be brought under kkt_tol within the budget.
    """
    cfg = cfg or MpcConfig()
    barriers = barriers if barriers is not None else BarrierSpec.empty()
    n = cfg.horizon

    refs = np.asarray([tuple(row)[:4] for row in reference], dtype=np.float64)
    if refs.ndim != 2 or refs.shape[0] < n or refs.shape[1] != 4:
        raise BadReference(f"need at least {n} reference rows of (x, y, z, heading)")
    refs = refs[:n]
    x0a = x0.as_array()
    if not (np.all(np.isfinite(refs)) and np.all(np.isfinite(x0a))):
        raise BadReference("reference and state must be finite")

    n_obs = barriers.count()
    if n_obs:
        if barriers.predictions.shape[1] < n + 1:
            raise ValueError("obstacle predictions must cover the horizon")
        obs = np.ascontiguousarray(barriers.predictions[:, :n + 1, :])
        if barriers.radii is not None:
            ds2 = barriers.radii ** 2
        else:
            ds2 = np.full(n_obs, barriers.d_safe ** 2)
    else:
        obs = np.zeros((0, n + 1, 2))
        ds2 = np.zeros(0)
    lam = np.full(n, barriers.decay)

    report = SolverReport()
    if warm_start is not None and np.shape(warm_start) == (n, 2):
        us = np.vstack([warm_start[1:], warm_start[-1:]])
        us = _project(np.asarray(us, dtype=np.float64), cfg)
        report.warm_started = True
    else:
        us = np.zeros((n, 2))

    mu = np.zeros((n_obs, n))
    rho = cfg.penalty_init
    prev_violation = math.inf
    value = cost = math.inf
    cons = np.zeros((n_obs, n))
    for outer in range(cfg.max_outer):
        report.outer_rounds = outer + 1
        us, value, cost, grad, cons = _inner_descent(
            x0a, us, refs, obs, ds2, lam, mu, rho, cfg, report)
        violation = float(np.max(-cons)) if n_obs else 0.0
        violation = max(0.0, violation)
        report.max_violation = violation
        if violation <= cfg.kkt_tol:
            break
        mu = np.maximum(0.0, mu - rho * cons)
        if violation > 0.25 * prev_violation:
            rho = min(rho * cfg.penalty_growth, 1e8)
        prev_violation = violation

    report.cost = float(cost)
    report.augmented = float(value)
    report.feasible = report.max_violation <= cfg.kkt_tol
    report.controls = us
    predicted = accel.unicycle_rollout(x0a, us, cfg.dt)
    if not report.feasible:
        raise Infeasible(
            f"barrier violation {report.max_violation:.3e} above "
            f"{cfg.kkt_tol:.1e} after {report.outer_rounds} rounds", report)
    return Control(float(us[0, 0]), float(us[0, 1])), predicted, report
