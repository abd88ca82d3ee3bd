"""Global routing: the ego's own trail first, offline roads as fallback."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from ..formats import MalformedDocument, read_json, validate_document, write_json
from ..geometry import GeoPoint, LocalFrame, haversine_m

# A goal counts as "on the trail" when it sits this close to an ego node;
# matches the task success radius.
CONNECT_RADIUS_M = 10.0


class Unreachable(ValueError):
    """No route exists between the requested endpoints."""


class EmptyGraph(ValueError):
    """Neither a trail nor a road graph to plan over."""


@dataclass(frozen=True)
class WaypointSequence:
    """Ordered metric waypoints; consecutive entries are distinct."""

    points: tuple

    def __post_init__(self):
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        if not pts:
            raise ValueError("waypoint sequence must hold at least one point")
        if any(len(p) != 3 for p in pts):
            raise ValueError("waypoints are (x, y, z) meters")
        for a, b in zip(pts, pts[1:]):
            if a == b:
                raise ValueError("consecutive waypoints must differ")
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, seq) -> "WaypointSequence":
        """Build while dropping consecutive duplicates."""
        out = []
        for p in seq:
            q = tuple(float(c) for c in p)
            if not out or out[-1] != q:
                out.append(q)
        return cls(tuple(out))

    def total_length(self) -> float:
        return sum(
            math.dist(a[:2], b[:2]) for a, b in zip(self.points, self.points[1:]))


def dijkstra(adjacency, source, target):
    """Shortest path over {node: [(neighbor, weight), ...]}.

    Returns (node path, cost). Ties resolve toward lower node ids because
    the heap orders (cost, node) tuples.
    """
    if source == target:
        return [source], 0.0
    dist = {source: 0.0}
    prev = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        for v, w in adjacency.get(u, ()):
            nd = d + w
            if nd < dist.get(v, math.inf):
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    if target not in done:
        raise Unreachable(f"no route from {source} to {target}")
    path = [target]
    while path[-1] != source:
        path.append(prev[path[-1]])
    path.reverse()
    return path, dist[target]


class RoadGraph:
    """Undirected geo-referenced road network.

    Edge lengths may exceed the great-circle distance (roads bend) but
    never undercut it; construction rejects shorter claims.
    """

    def __init__(self, nodes, edges):
        self.nodes = dict(nodes)
        self.edges = []
        self.adjacency = {nid: [] for nid in self.nodes}
        for a, b, length in edges:
            if a not in self.nodes or b not in self.nodes:
                raise MalformedDocument(f"road edge ({a}, {b}) references unknown node")
            floor = 0.999 * haversine_m(self.nodes[a], self.nodes[b])
            if length < floor:
                raise MalformedDocument(
                    f"road edge ({a}, {b}) shorter than the geodesic: {length} < {floor}")
            self.edges.append((a, b, float(length)))
            self.adjacency[a].append((b, float(length)))
            self.adjacency[b].append((a, float(length)))
        self.component_of = self._components()

    def _components(self):
        comp = {}
        for seed_id in sorted(self.nodes):
            if seed_id in comp:
                continue
            comp[seed_id] = seed_id
            stack = [seed_id]
            while stack:
                u = stack.pop()
                for v, _ in self.adjacency[u]:
                    if v not in comp:
                        comp[v] = seed_id
                        stack.append(v)
        return comp

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def from_document(cls, doc: dict) -> "RoadGraph":
        validate_document(doc, "road_graph")
        nodes = {}
        for rec in doc["nodes"]:
            if rec["id"] in nodes:
                raise MalformedDocument(f"duplicate road node id {rec['id']}")
            nodes[rec["id"]] = GeoPoint(rec["lat"], rec["lon"])
        edges = [(e["a"], e["b"], e["length_m"]) for e in doc["edges"]]
        return cls(nodes, edges)

    @classmethod
    def load(cls, path) -> "RoadGraph":
        return cls.from_document(read_json(path))

    def to_document(self) -> dict:
        return {
            "version": 1,
            "nodes": [
                {"id": nid, "lat": p.lat_deg, "lon": p.lon_deg}
                for nid, p in sorted(self.nodes.items())
            ],
            "edges": [
                {"a": a, "b": b, "length_m": length}
                for a, b, length in self.edges
            ],
        }

    def save(self, path):
        write_json(path, self.to_document())

    @classmethod
    def from_scenario(cls, scenario) -> "RoadGraph":
        """Lift a scenario's metric road sketch into geo coordinates."""
        frame = LocalFrame(scenario.anchor)
        nodes = {
            rec["id"]: frame.to_geo(rec["x"], rec["y"])
            for rec in scenario.road_graph.get("nodes", [])
        }
        edges = []
        for a, b in scenario.road_graph.get("edges", []):
            edges.append((a, b, haversine_m(nodes[a], nodes[b])))
        return cls(nodes, edges)

    def nearest(self, point: GeoPoint):
        """Closest node id by great-circle distance, ties to the lower id."""
        if not self.nodes:
            raise EmptyGraph("road graph has no nodes")
        return min(
            self.nodes,
            key=lambda nid: (haversine_m(self.nodes[nid], point), nid))

    def shortest_path(self, a, b):
        if self.component_of.get(a) != self.component_of.get(b):
            raise Unreachable(f"road nodes {a} and {b} are in different components")
        return dijkstra(self.adjacency, a, b)


def _trail_route(start_xy, goal_xy, graph):
    """Shortest path along logged ego nodes, or None when the trail does
    not connect the endpoints within CONNECT_RADIUS_M."""
    if not graph.ego_nodes:
        return None
    positions = {n.id: n.position for n in graph.ego_nodes}
    adjacency = {nid: [] for nid in positions}
    for e in graph.trajectory_edges:
        adjacency[e.a].append((e.b, e.length))
        adjacency[e.b].append((e.a, e.length))

    def near(xy):
        return [
            nid for nid in sorted(positions)
            if math.dist(positions[nid][:2], xy) <= CONNECT_RADIUS_M
        ]

    entries = near(start_xy)
    exits = near(goal_xy)
    if not entries or not exits:
        return None
    entry = min(entries, key=lambda nid: (math.dist(positions[nid][:2], start_xy), nid))
    leave = min(exits, key=lambda nid: (math.dist(positions[nid][:2], goal_xy), nid))
    try:
        path, _ = dijkstra(adjacency, entry, leave)
    except Unreachable:
        return None
    return path


def global_plan(start, goal_node, graph, roads: RoadGraph = None) -> WaypointSequence:
    """Route from a metric start pose to a graph node's position.

    Prefers the ego-trajectory subgraph when it reaches the goal; otherwise
    routes across the offline road graph between the nearest road nodes,
    with straight connectors at both ends.
    """
    sx, sy = float(start[0]), float(start[1])
    z = float(start[2]) if len(start) > 2 else 0.0
    gx, gy = graph.frame.to_local(goal_node.geo)

    trail = _trail_route((sx, sy), (gx, gy), graph)
    if trail is not None:
        positions = {n.id: n.position for n in graph.ego_nodes}
        pts = [(sx, sy, z)]
        pts += [(positions[nid][0], positions[nid][1], z) for nid in trail]
        pts.append((gx, gy, z))
        return WaypointSequence.from_points(pts)

    if roads is None or len(roads) == 0:
        if not graph.ego_nodes:
            raise EmptyGraph("no trail and no road graph")
        raise Unreachable("goal is off the trail and no road graph is loaded")

    a = roads.nearest(graph.frame.to_geo(sx, sy))
    b = roads.nearest(goal_node.geo)
    path, _ = roads.shortest_path(a, b)
    pts = [(sx, sy, z)]
    for nid in path:
        x, y = graph.frame.to_local(roads.nodes[nid])
        pts.append((x, y, z))
    pts.append((gx, gy, z))
    return WaypointSequence.from_points(pts)
