"""Deterministic 2.5D outdoor world.

Buildings block line of sight, static objects sit still, scripted agents
follow piecewise-linear waypoint schedules, and the ego vehicle integrates
unicycle dynamics. A synthetic sensor emits labeled detections in the ego
frame with configurable range, field of view, Gaussian position noise, and
dropout. Everything is a pure function of (scenario, seed, control history);
sensing twice at the same step returns identical output.

Ground-truth object states (ids, velocities) are exposed separately for test
harness oracles only; the navigation pipeline must consume detections alone.
"""

import math
from dataclasses import dataclass

import numpy as np

from semnav import accel
from semnav.formats import MalformedDocument, read_json, validate_document
from semnav.geometry import (
    Box3D,
    GeoPoint,
    LocalFrame,
    Pose,
    polygon_centroid,
    polygon_is_simple,
    segments_intersect,
    wrap_angle,
    world_to_frame,
)

DEFAULT_V_LIMITS = (-0.5, 2.0)
DEFAULT_W_LIMITS = (-1.5, 1.5)
DEFAULT_MAX_AGENT_SPEED = 20.0
DEFAULT_BOX = {"length": 0.5, "width": 0.5, "height": 1.0}


class NotSteppedError(RuntimeError):
    """sense() called before the first step()."""


@dataclass(frozen=True)
class SensorConfig:
    range_m: float = 30.0
    fov_rad: float = 2.0 * math.pi
    noise_sigma_m: float = 0.05
    dropout_prob: float = 0.02

    def __post_init__(self):
        if self.range_m <= 0:
            raise ValueError("sensor range must be positive")
        if not (0 < self.fov_rad <= 2.0 * math.pi + 1e-12):
            raise ValueError("fov must be in (0, 2*pi]")
        if self.noise_sigma_m < 0 or not (0 <= self.dropout_prob <= 1):
            raise ValueError("bad sensor noise settings")


@dataclass(frozen=True)
class Building:
    label: str
    footprint: tuple
    height: float

    @property
    def centroid(self):
        return polygon_centroid(self.footprint)


@dataclass(frozen=True)
class StaticObject:
    label: str
    position: tuple  # (x, y, z)
    box: Box3D


@dataclass(frozen=True)
class DynamicAgentScript:
    """Piecewise-linear schedule. Agents hold at the last waypoint unless
    looping; with despawn set they disappear once the schedule ends."""

    label: str
    extents: tuple  # (length, width, height)
    waypoints: tuple  # ((t, x, y), ...) strictly increasing t
    loop: bool = False
    despawn: bool = False

    def alive_at(self, t: float) -> bool:
        if self.despawn and not self.loop and t > self.waypoints[-1][0]:
            return False
        return True

    def position_at(self, t: float):
        wps = self.waypoints
        t0 = wps[0][0]
        tn = wps[-1][0]
        if self.loop and tn > t0 and t > tn:
            t = t0 + (t - t0) % (tn - t0)
        if t <= t0:
            return (wps[0][1], wps[0][2])
        if t >= tn:
            return (wps[-1][1], wps[-1][2])
        for a, b in zip(wps, wps[1:]):
            if a[0] <= t <= b[0]:
                u = (t - a[0]) / (b[0] - a[0])
                return (a[1] + u * (b[1] - a[1]), a[2] + u * (b[2] - a[2]))
        return (wps[-1][1], wps[-1][2])

    def velocity_at(self, t: float):
        wps = self.waypoints
        t0 = wps[0][0]
        tn = wps[-1][0]
        if self.loop and tn > t0 and t > tn:
            t = t0 + (t - t0) % (tn - t0)
        if t < t0 or t >= tn:
            return (0.0, 0.0)
        for a, b in zip(wps, wps[1:]):
            if a[0] <= t < b[0]:
                dt = b[0] - a[0]
                return ((b[1] - a[1]) / dt, (b[2] - a[2]) / dt)
        return (0.0, 0.0)

    def heading_at(self, t: float) -> float:
        vx, vy = self.velocity_at(t)
        if vx == 0.0 and vy == 0.0:
            return 0.0
        return math.atan2(vy, vx)


@dataclass(frozen=True)
class SimDetection:
    label: str
    box: Box3D  # ego frame; center carries the measured position
    timestamp: float


@dataclass
class EgoState:
    pose: Pose
    velocity: tuple  # world-frame (vx, vy, vz)


@dataclass(frozen=True)
class TruthState:
    """Harness-only ground truth; never handed to the pipeline."""

    truth_id: int
    label: str
    position: tuple
    velocity: tuple
    is_agent: bool


def _box_from_dict(d, cx=0.0, cy=0.0, cz=None, yaw=0.0):
    d = d or DEFAULT_BOX
    if cz is None:
        cz = d["height"] / 2.0
    return Box3D(cx, cy, cz, d["length"], d["width"], d["height"], yaw)


@dataclass(frozen=True)
class Scenario:
    name: str
    anchor: GeoPoint
    seed: int
    ego_start: Pose
    v_limits: tuple
    w_limits: tuple
    sensor: SensorConfig
    buildings: tuple
    static_objects: tuple
    dynamic_agents: tuple
    road_graph: dict
    max_agent_speed: float

    @property
    def frame(self) -> LocalFrame:
        return LocalFrame(self.anchor)

    @staticmethod
    def from_dict(doc: dict) -> "Scenario":
        validate_document(doc, "scenario", expected_version=1)

        buildings = []
        for b in doc.get("buildings", ()):
            pts = tuple((float(x), float(y)) for x, y in b["footprint"])
            if not polygon_is_simple(pts):
                raise MalformedDocument(f"building {b['label']!r}: footprint not a simple polygon")
            buildings.append(Building(b["label"], pts, float(b.get("height", 10.0))))

        statics = []
        for s in doc.get("static_objects", ()):
            raw = s["position"]
            pos = list(raw) + [0.0] * (3 - len(raw))
            cz = raw[2] if len(raw) == 3 else None
            box = _box_from_dict(s.get("box"), pos[0], pos[1], cz, float(s.get("yaw", 0.0)))
            statics.append(StaticObject(s["label"], tuple(pos), box))

        max_speed = float(doc.get("max_agent_speed", DEFAULT_MAX_AGENT_SPEED))
        agents = []
        for a in doc.get("dynamic_agents", ()):
            wps = tuple((float(w["t"]), float(w["x"]), float(w["y"])) for w in a["waypoints"])
            for p, q in zip(wps, wps[1:]):
                if q[0] <= p[0]:
                    raise MalformedDocument(
                        f"agent {a['label']!r}: waypoint times must strictly increase"
                    )
                speed = math.hypot(q[1] - p[1], q[2] - p[2]) / (q[0] - p[0])
                if speed > max_speed + 1e-9:
                    raise MalformedDocument(
                        f"agent {a['label']!r}: segment speed {speed:.2f} m/s exceeds "
                        f"max {max_speed:.2f}"
                    )
            box = a.get("box") or DEFAULT_BOX
            agents.append(
                DynamicAgentScript(
                    a["label"],
                    (box["length"], box["width"], box["height"]),
                    wps,
                    loop=bool(a.get("loop", False)),
                    despawn=bool(a.get("despawn", False)),
                )
            )

        rg = doc.get("road_graph", {"nodes": [], "edges": []})
        ids = [n["id"] for n in rg["nodes"]]
        if len(set(ids)) != len(ids):
            raise MalformedDocument("road_graph: duplicate node ids")
        known = set(ids)
        for e in rg["edges"]:
            if e[0] not in known or e[1] not in known:
                raise MalformedDocument(f"road_graph: edge {e} references unknown node")

        ego = doc["ego"]
        return Scenario(
            name=doc.get("name", "unnamed"),
            anchor=GeoPoint(doc["anchor"]["lat_deg"], doc["anchor"]["lon_deg"]),
            seed=int(doc["seed"]),
            ego_start=Pose(*ego["start"]),
            v_limits=tuple(ego.get("v_limits", DEFAULT_V_LIMITS)),
            w_limits=tuple(ego.get("w_limits", DEFAULT_W_LIMITS)),
            sensor=SensorConfig(**doc.get("sensor", {})),
            buildings=tuple(buildings),
            static_objects=tuple(statics),
            dynamic_agents=tuple(agents),
            road_graph=rg,
            max_agent_speed=max_speed,
        )

    @staticmethod
    def load(path) -> "Scenario":
        return Scenario.from_dict(read_json(path))


class World:
    """Single-owner simulation; hand out snapshots, never share mutably."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.t = 0.0
        self.step_count = 0
        self.ego = EgoState(scenario.ego_start, (0.0, 0.0, 0.0))
        # Truth ids: statics first, then agents, in file order, from 1.
        self._statics = list(scenario.static_objects)
        self._agents = list(scenario.dynamic_agents)
        self._paused_since = {}   # agent index -> pause time
        self._time_shift = {}     # agent index -> accumulated paused seconds
        self.last_sense_truth_ids: list = []

    def step(self, control, dt: float) -> EgoState:
        """Advance the clock; integrate ego under clamped (v, w)."""
        if not (0.0 < dt <= 0.5):
            raise ValueError(f"dt must be in (0, 0.5], got {dt}")
        v = min(max(float(control[0]), self.scenario.v_limits[0]), self.scenario.v_limits[1])
        w = min(max(float(control[1]), self.scenario.w_limits[0]), self.scenario.w_limits[1])
        p = self.ego.pose
        x0 = np.array([p.x, p.y, 0.0, p.heading])
        xs = accel.unicycle_rollout(x0, np.array([[v, w]]), dt)
        pose = Pose(xs[1, 0], xs[1, 1], wrap_angle(xs[1, 3]))
        self.ego = EgoState(pose, (v * math.cos(p.heading), v * math.sin(p.heading), 0.0))
        self.t += dt
        self.step_count += 1
        return self.ego

    def spawn_agent(self, script: DynamicAgentScript) -> int:
        """Append a live agent mid-run; returns its truth id.

        New agents take the next positional id, so noise draws for the
        objects that already existed are unchanged.
        """
        self._agents.append(script)
        return len(self._statics) + len(self._agents)

    def set_agent_paused(self, tid: int, paused: bool) -> bool:
        """Freeze an agent in place or resume its schedule where it left off."""
        i = tid - len(self._statics) - 1
        if not (0 <= i < len(self._agents)):
            return False
        if paused and i not in self._paused_since:
            self._paused_since[i] = self.t
        elif not paused and i in self._paused_since:
            held = self.t - self._paused_since.pop(i)
            self._time_shift[i] = self._time_shift.get(i, 0.0) + held
        return True

    def _agent_clock(self, i: int) -> float:
        t = self._paused_since.get(i, self.t)
        return t - self._time_shift.get(i, 0.0)

    def _live_objects(self):
        """(truth_id, label, world xy, z, extents, world yaw) in fixed order."""
        out = []
        tid = 1
        for s in self._statics:
            out.append((tid, s.label, (s.position[0], s.position[1]), s.position[2],
                        (s.box.length, s.box.width, s.box.height), s.box.yaw))
            tid += 1
        for i, a in enumerate(self._agents):
            ta = self._agent_clock(i)
            if a.alive_at(ta):
                x, y = a.position_at(ta)
                out.append((tid, a.label, (x, y), 0.0, a.extents, a.heading_at(ta)))
            tid += 1
        return out

    def _occluded(self, ex, ey, ox, oy) -> bool:
        seg_a = (ex, ey)
        seg_b = (ox, oy)
        for b in self.scenario.buildings:
            pts = b.footprint
            n = len(pts)
            for i in range(n):
                if segments_intersect(seg_a, seg_b, pts[i], pts[(i + 1) % n]):
                    return True
        return False

    def sense(self):
        """Labeled detections in the ego frame for the current step.

        Each object consumes a fixed amount of randomness whether or not it
        is visible, so one object's visibility never perturbs another's
        noise. Repeated calls at the same step are identical.
        """
        if self.step_count == 0:
            raise NotSteppedError("sense() requires at least one step()")
        cfg = self.scenario.sensor
        ego = self.ego.pose
        rng = np.random.default_rng([self.scenario.seed & 0xFFFFFFFF,
                                     self.scenario.seed >> 32, self.step_count])
        detections = []
        truth_ids = []
        for tid, label, (ox, oy), oz, extents, oyaw in self._live_objects():
            u = rng.random()
            nx, ny = rng.normal(0.0, 1.0, 2)
            rx, ry = world_to_frame(ego, ox, oy)
            if math.hypot(rx, ry) > cfg.range_m:
                continue
            if abs(math.atan2(ry, rx)) > cfg.fov_rad / 2.0 + 1e-12:
                continue
            if self._occluded(ego.x, ego.y, ox, oy):
                continue
            if u < cfg.dropout_prob:
                continue
            mx = rx + cfg.noise_sigma_m * nx
            my = ry + cfg.noise_sigma_m * ny
            box = Box3D(mx, my, oz if oz else extents[2] / 2.0,
                        extents[0], extents[1], extents[2],
                        wrap_angle(oyaw - ego.heading))
            detections.append(SimDetection(label, box, self.t))
            truth_ids.append(tid)
        self.last_sense_truth_ids = truth_ids
        return detections

    def truth_states(self):
        """Ground truth for harness oracles only."""
        out = {}
        tid = 1
        for s in self._statics:
            out[tid] = TruthState(tid, s.label, tuple(s.position), (0.0, 0.0, 0.0), False)
            tid += 1
        for i, a in enumerate(self._agents):
            ta = self._agent_clock(i)
            if a.alive_at(ta):
                x, y = a.position_at(ta)
                vx, vy = (0.0, 0.0) if i in self._paused_since else a.velocity_at(ta)
                out[tid] = TruthState(tid, a.label, (x, y, 0.0), (vx, vy, 0.0), True)
            tid += 1
        return out
