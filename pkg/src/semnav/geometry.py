"""Planar poses, geographic coordinates, and the local metric frame.

All navigation runs in a local east-north frame (meters) anchored at a
reference geographic point. Geographic round-trips use an equirectangular
projection about the anchor, which is exactly invertible and accurate to
well under a meter at the few-kilometer scales this stack operates on.
"""

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0

# Beyond this the flat-frame approximation degrades; reject instead of drifting.
MAX_FRAME_RANGE_M = 50_000.0


class OutOfRange(ValueError):
    """Point too far from the frame anchor to represent faithfully."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = -((-a + math.pi) % (2.0 * math.pi) - math.pi)
    return w


@dataclass(frozen=True)
class GeoPoint:
    lat_deg: float
    lon_deg: float


@dataclass(frozen=True)
class Pose:
    """Planar pose: position in meters, heading in radians, wrapped."""

    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def position(self):
        return (self.x, self.y)


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned footprint with yaw: center, full extents, rotation."""

    cx: float
    cy: float
    cz: float
    length: float
    width: float
    height: float
    yaw: float

    def footprint(self):
        """Corner coordinates of the rotated ground rectangle, CCW."""
        hl = self.length / 2.0
        hw = self.width / 2.0
        c = math.cos(self.yaw)
        s = math.sin(self.yaw)
        out = []
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)):
            out.append((self.cx + c * dx - s * dy, self.cy + s * dx + c * dy))
        return out


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two geographic points."""
    la1 = math.radians(a.lat_deg)
    la2 = math.radians(b.lat_deg)
    dla = la2 - la1
    dlo = math.radians(b.lon_deg - a.lon_deg)
    s = math.sin(dla / 2.0) ** 2 + math.cos(la1) * math.cos(la2) * math.sin(dlo / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.atan2(math.sqrt(s), math.sqrt(1.0 - s))


class LocalFrame:
    """East-north metric frame anchored at a geographic point.

    to_local and to_geo are exact inverses of each other by construction:
    both use the same fixed cos(anchor latitude) scale factor.
    """

    def __init__(self, anchor: GeoPoint):
        self.anchor = anchor
        self._lat0 = math.radians(anchor.lat_deg)
        self._coslat = math.cos(self._lat0)
        if self._coslat <= 1e-9:
            raise ValueError("frame anchor too close to a pole")

    def to_local(self, p: GeoPoint):
        """Geographic point -> (east, north) meters. Raises OutOfRange."""
        x = math.radians(p.lon_deg - self.anchor.lon_deg) * self._coslat * EARTH_RADIUS_M
        y = math.radians(p.lat_deg - self.anchor.lat_deg) * EARTH_RADIUS_M
        if math.hypot(x, y) > MAX_FRAME_RANGE_M:
            raise OutOfRange(f"point {p} is {math.hypot(x, y):.0f} m from anchor")
        return (x, y)

    def to_geo(self, x: float, y: float) -> GeoPoint:
        """(east, north) meters -> geographic point. Raises OutOfRange."""
        if math.hypot(x, y) > MAX_FRAME_RANGE_M:
            raise OutOfRange(f"({x:.0f}, {y:.0f}) m exceeds frame range")
        lat = self.anchor.lat_deg + math.degrees(y / EARTH_RADIUS_M)
        lon = self.anchor.lon_deg + math.degrees(x / (EARTH_RADIUS_M * self._coslat))
        return GeoPoint(lat, lon)


def compose_pose(base: Pose, offset: Pose) -> Pose:
    """Apply offset in base's own frame; headings add and wrap."""
    c = math.cos(base.heading)
    s = math.sin(base.heading)
    return Pose(
        base.x + c * offset.x - s * offset.y,
        base.y + s * offset.x + c * offset.y,
        base.heading + offset.heading,
    )


def invert_pose(p: Pose) -> Pose:
    """Inverse under compose_pose: compose_pose(p, invert_pose(p)) is identity."""
    c = math.cos(p.heading)
    s = math.sin(p.heading)
    return Pose(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.heading)


def world_to_frame(frame: Pose, wx: float, wy: float):
    """World-frame point expressed in the coordinates of `frame`."""
    c = math.cos(frame.heading)
    s = math.sin(frame.heading)
    dx = wx - frame.x
    dy = wy - frame.y
    return (c * dx + s * dy, -s * dx + c * dy)


def _orient(ax, ay, bx, by, cx, cy):
    v = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    if v > 0.0:
        return 1
    if v < 0.0:
        return -1
    return 0


def _on_segment(ax, ay, bx, by, px, py):
    return min(ax, bx) <= px <= max(ax, bx) and min(ay, by) <= py <= max(ay, by)


def segments_intersect(a, b, c, d) -> bool:
    """True if closed segments ab and cd share any point."""
    o1 = _orient(*a, *b, *c)
    o2 = _orient(*a, *b, *d)
    o3 = _orient(*c, *d, *a)
    o4 = _orient(*c, *d, *b)
    if o1 != o2 and o3 != o4:
        return True
    if o1 == 0 and _on_segment(*a, *b, *c):
        return True
    if o2 == 0 and _on_segment(*a, *b, *d):
        return True
    if o3 == 0 and _on_segment(*c, *d, *a):
        return True
    if o4 == 0 and _on_segment(*c, *d, *b):
        return True
    return False


def polygon_is_simple(pts) -> bool:
    """No two non-adjacent edges of the closed polygon may intersect."""
    n = len(pts)
    if n < 3:
        return False
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i or (j - i) % n in (1, n - 1):
                continue
            if segments_intersect(edges[i][0], edges[i][1], edges[j][0], edges[j][1]):
                return False
    return True


def polygon_centroid(pts):
    """Area centroid of a simple polygon (any winding)."""
    a2 = 0.0
    cx = 0.0
    cy = 0.0
    n = len(pts)
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        cross = x0 * y1 - x1 * y0
        a2 += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    if abs(a2) < 1e-12:
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return (sum(xs) / n, sum(ys) / n)
    return (cx / (3.0 * a2), cy / (3.0 * a2))
