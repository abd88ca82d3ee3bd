"""Multi-object tracking over synthetic detections.

Identity association is greedy nearest-neighbor with a distance gate and a
hard same-label requirement. Velocity comes from a least-squares
constant-velocity fit over a sliding time window, which is exact on
noiseless linear motion. Each track's history is the spatial-temporal
corridor consumed by the scene graph's dynamic-object removal rule.
"""

import math
from dataclasses import dataclass, field

from semnav.geometry import Box3D, Pose, compose_pose


class NonMonotonicTime(ValueError):
    """update_tracks called with a timestamp that did not advance."""


class InsufficientHistory(ValueError):
    """Motion classification needs at least two observations."""


DYNAMIC = "dynamic"
STATIC = "static"
QUASI_STATIC = "quasi_static"


@dataclass(frozen=True)
class TrackerConfig:
    gate_radius: float = 1.5
    step_threshold: float = 0.03
    k: int = 5
    quasi_static_window: float = 3.0
    stale_timeout: float = 5.0

    def __post_init__(self):
        for name in ("gate_radius", "step_threshold", "quasi_static_window", "stale_timeout"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class Track:
    id: int
    label: str
    history: list = field(default_factory=list)  # [(Pose, Box3D, t), ...]
    velocity: tuple = (0.0, 0.0, 0.0)
    motion_class: str = STATIC
    displacement_steps: int = 0
    last_seen: float = 0.0
    # Timestamp of the last displacement_steps increment; lets callers decide
    # when a stop-and-go object has settled.
    last_step_increase: float = 0.0

    def append(self, pose: Pose, box: Box3D, t: float, step_threshold: float):
        if self.history:
            prev = self.history[-1][0]
            if math.hypot(pose.x - prev.x, pose.y - prev.y) > step_threshold:
                self.displacement_steps += 1
                self.last_step_increase = t
        self.history.append((pose, box, t))
        self.last_seen = t

    def position(self):
        pose, box, _ = self.history[-1]
        return (pose.x, pose.y, box.cz)

    def box(self) -> Box3D:
        return self.history[-1][1]

    def settled_for(self, t: float, window: float) -> bool:
        """No displacement-step growth within the trailing window."""
        return (t - self.last_step_increase) >= window


def _fit_velocity(track: Track, t: float, window: float) -> tuple:
    """Constant-velocity least squares over observations newer than t-window."""
    pts = [(ts, p.x, p.y, b.cz) for (p, b, ts) in track.history if ts >= t - window]
    n = len(pts)
    if n < 2:
        return (0.0, 0.0, 0.0)
    mean_t = sum(p[0] for p in pts) / n
    denom = sum((p[0] - mean_t) ** 2 for p in pts)
    if denom == 0.0:
        return (0.0, 0.0, 0.0)
    out = []
    for axis in (1, 2, 3):
        mean_a = sum(p[axis] for p in pts) / n
        num = sum((p[0] - mean_t) * (p[axis] - mean_a) for p in pts)
        out.append(num / denom)
    return tuple(out)


def classify_motion(track: Track, cfg: TrackerConfig) -> str:
    """dynamic: moved in >= k frames; static: never moved; else quasi-static."""
    if len(track.history) < 2:
        raise InsufficientHistory(f"track {track.id} has {len(track.history)} entries")
    if track.displacement_steps >= cfg.k:
        return DYNAMIC
    if track.displacement_steps == 0:
        return STATIC
    return QUASI_STATIC


def dynamic_removal_set(tracks, cfg: TrackerConfig) -> set:
    """Track ids whose corridors must be excluded from the scene graph."""
    return {tr.id for tr in tracks if tr.displacement_steps >= cfg.k}


@dataclass(frozen=True)
class TrackView:
    """Frozen copy of one track's decision-relevant fields.

    Safe to hand across threads or hold past the next tracker update;
    mirrors the Track accessors the scene graph consumes.
    """

    id: int
    label: str
    xyz: tuple
    last_box: Box3D
    velocity: tuple
    motion_class: str
    displacement_steps: int
    last_step_increase: float
    last_seen: float
    observations: int

    @classmethod
    def of(cls, tr: Track) -> "TrackView":
        return cls(tr.id, tr.label, tr.position(), tr.box(), tuple(tr.velocity),
                   tr.motion_class, tr.displacement_steps, tr.last_step_increase,
                   tr.last_seen, len(tr.history))

    def position(self):
        return self.xyz

    def box(self) -> Box3D:
        return self.last_box

    def settled_for(self, t: float, window: float) -> bool:
        return (t - self.last_step_increase) >= window


class Tracker:
    def __init__(self, cfg: TrackerConfig = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: dict = {}
        self._next_id = 1
        self._last_t = None

    def views(self) -> tuple:
        """Immutable per-track snapshots, sorted by id."""
        return tuple(TrackView.of(self.tracks[tid]) for tid in sorted(self.tracks))

    def update_tracks(self, detections, ego, t: float):
        """Associate one sense() batch; returns live tracks sorted by id."""
        if self._last_t is not None and t <= self._last_t:
            raise NonMonotonicTime(f"t={t} does not advance past {self._last_t}")
        self._last_t = t
        cfg = self.cfg

        world = []
        for det in detections:
            w = compose_pose(ego.pose, Pose(det.box.cx, det.box.cy, det.box.yaw))
            box = Box3D(w.x, w.y, det.box.cz, det.box.length, det.box.width,
                        det.box.height, w.heading)
            world.append((w, box))

        # Candidate (distance, track id, detection index) pairs inside the
        # gate; global distance order makes the greedy pick deterministic.
        candidates = []
        for tid, tr in self.tracks.items():
            tx, ty, _ = tr.position()
            for di, (pose, _) in enumerate(world):
                if tr.label != detections[di].label:
                    continue
                d = math.hypot(pose.x - tx, pose.y - ty)
                if d <= cfg.gate_radius:
                    candidates.append((d, tid, di))
        candidates.sort()

        matched_tracks = set()
        matched_dets = set()
        for d, tid, di in candidates:
            if tid in matched_tracks or di in matched_dets:
                continue
            matched_tracks.add(tid)
            matched_dets.add(di)
            pose, box = world[di]
            self.tracks[tid].append(pose, box, t, cfg.step_threshold)

        for di, (pose, box) in enumerate(world):
            if di in matched_dets:
                continue
            tr = Track(self._next_id, detections[di].label)
            self._next_id += 1
            tr.append(pose, box, t, cfg.step_threshold)
            self.tracks[tr.id] = tr

        stale = [tid for tid, tr in self.tracks.items()
                 if t - tr.last_seen > cfg.stale_timeout]
        for tid in stale:
            del self.tracks[tid]

        out = []
        for tid in sorted(self.tracks):
            tr = self.tracks[tid]
            tr.velocity = _fit_velocity(tr, t, cfg.quasi_static_window)
            if len(tr.history) >= 2:
                tr.motion_class = classify_motion(tr, cfg)
            out.append(tr)
        return out
