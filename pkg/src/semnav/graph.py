"""Online multi-level scene graph.

Level 0 holds object nodes (one per live track, plus any bootstrapped from an
offline map). Buildings load once at level 1. Spatial-semantic agglomerative
clustering rebuilds the levels above 0 every update cycle: groups whose
average-linkage similarity clears the merge threshold become cluster nodes
one level up, recursively, until a level produces no merge or the level cap
is hit. Nodes that never merge stay parentless, so the hierarchy is a forest
with possibly many roots.

The per-cycle update order is: upsert tracked objects, drop corridors that
accumulated enough moving frames, extend the ego trajectory, recluster.
Cluster summaries are produced by the configured language provider and cached
by member-label set, so unchanged groups never re-trigger a provider call.
"""

import math
from dataclasses import dataclass

import numpy as np

from semnav import embedding
from semnav.formats import MalformedDocument, validate_document
from semnav.geometry import Box3D, GeoPoint, LocalFrame, Pose, haversine_m
from semnav.tracking import (
    DYNAMIC,
    QUASI_STATIC,
    Tracker,
    TrackerConfig,
    dynamic_removal_set,
)

EGO_ID_BASE = 1_000_000
BOOTSTRAP_ID_BASE = 2_000_000
BUILDING_ID_BASE = 3_000_000
CLUSTER_ID_BASE = 4_000_000
_CLUSTER_LEVEL_STRIDE = 100_000

OBJECT_LEVEL = 0
BUILDING_LEVEL = 1


@dataclass
class ObjectNode:
    id: int
    label: str
    box: Box3D
    position: tuple  # (x, y, z) meters
    geo: GeoPoint
    last_updated: float
    level: int = OBJECT_LEVEL


@dataclass
class BuildingNode:
    id: int
    label: str
    position: tuple
    geo: GeoPoint
    level: int = BUILDING_LEVEL


@dataclass
class ClusterNode:
    id: int
    label: str
    position: tuple  # centroid
    geo: GeoPoint
    level: int
    members: tuple  # child node ids


@dataclass(frozen=True)
class EgoNode:
    id: int
    position: tuple
    velocity: tuple
    timestamp: float


@dataclass(frozen=True)
class TrajectoryEdge:
    a: int
    b: int
    length: float


@dataclass(frozen=True)
class ClusterConfig:
    semantic_weight: float = 0.5     # balance between label and position
    kernel_scale_m: float = 50.0     # distance at which spatial affinity drops to 1/e
    merge_threshold: float = 0.5
    max_levels: int = 4

    def __post_init__(self):
        if not (0.0 <= self.semantic_weight <= 1.0):
            raise ValueError("semantic_weight must be in [0, 1]")
        if self.kernel_scale_m <= 0:
            raise ValueError("kernel_scale_m must be positive")
        if not (0.0 < self.merge_threshold < 1.0):
            raise ValueError("merge_threshold must be in (0, 1)")
        if self.max_levels < 1:
            raise ValueError("max_levels must be >= 1")


def pairwise_similarity(a, b, cfg: ClusterConfig, embedder=embedding.embed) -> float:
    """Blend of spatial proximity and label similarity, in [0, 1], symmetric."""
    spatial = math.exp(-haversine_m(a.geo, b.geo) / cfg.kernel_scale_m)
    semantic = embedding.cosine(embedder(a.label), embedder(b.label))
    w = cfg.semantic_weight
    return (1.0 - w) * spatial + w * semantic


class SceneGraph:
    """Single-writer graph; hand read-only snapshots to other threads."""

    def __init__(self, anchor: GeoPoint, cluster_cfg: ClusterConfig = None,
                 tracker_cfg: TrackerConfig = None, provider=None,
                 embedder=embedding.embed, ego_spacing_m: float = 2.0,
                 adopt_radius_m: float = 1.5):
        from semnav.llm import MockLexicalProvider

        self.anchor = anchor
        self.frame = LocalFrame(anchor)
        self.cluster_cfg = cluster_cfg or ClusterConfig()
        self.tracker = Tracker(tracker_cfg or TrackerConfig())
        self.provider = provider or MockLexicalProvider()
        self.embedder = embedder
        self.ego_spacing_m = ego_spacing_m
        self.adopt_radius_m = adopt_radius_m

        self.objects: dict = {}
        self.buildings: dict = {}
        self.clusters: dict = {}
        self.ego_nodes: list = []
        self.trajectory_edges: list = []
        self.parent_of: dict = {}
        self.revision = 0

        self._embed_cache: dict = {}
        self._summary_cache: dict = {}
        self._bootstrap_seq = 0

    # -- helpers ---------------------------------------------------------

    def _geo(self, x: float, y: float) -> GeoPoint:
        return self.frame.to_geo(x, y)

    def _embed(self, label: str):
        v = self._embed_cache.get(label)
        if v is None:
            v = self.embedder(label)
            self._embed_cache[label] = v
        return v

    def node_by_id(self, nid: int):
        return self.objects.get(nid) or self.buildings.get(nid) or self.clusters.get(nid)

    def children(self, nid: int) -> tuple:
        node = self.clusters.get(nid)
        return node.members if node else ()

    def roots(self):
        """Every non-ego node without a parent, highest levels first."""
        out = []
        for store in (self.clusters, self.buildings, self.objects):
            for nid, node in store.items():
                if nid not in self.parent_of:
                    out.append(node)
        out.sort(key=lambda n: (-n.level, n.id))
        return out

    def node_counts(self) -> dict:
        return {
            "objects": len(self.objects),
            "buildings": len(self.buildings),
            "clusters": len(self.clusters),
            "ego": len(self.ego_nodes),
        }

    # -- bootstrap -------------------------------------------------------

    def bootstrap(self, buildings=(), known_objects=()):
        """Load the offline map: buildings and optionally pre-known objects.

        known_objects entries are (label, (x, y)) pairs; they receive ids in
        a reserved range so live tracks can later adopt them.
        """
        for i, b in enumerate(buildings):
            cx, cy = b.centroid
            node = BuildingNode(BUILDING_ID_BASE + i, b.label, (cx, cy, 0.0),
                                self._geo(cx, cy))
            self.buildings[node.id] = node
        for label, pos in known_objects:
            nid = BOOTSTRAP_ID_BASE + self._bootstrap_seq
            self._bootstrap_seq += 1
            node = ObjectNode(nid, label, Box3D(pos[0], pos[1], 0.25, 0.5, 0.5, 0.5, 0.0),
                              (pos[0], pos[1], 0.0), self._geo(pos[0], pos[1]), 0.0)
            self.objects[nid] = node
        self.revision += 1

    # -- node-level operations -------------------------------------------

    def make_object(self, nid: int, label: str, position, box: Box3D = None,
                    t: float = 0.0) -> ObjectNode:
        """Object node with geo derived from the graph's anchor frame."""
        x, y = position[0], position[1]
        z = position[2] if len(position) > 2 else 0.0
        if box is None:
            box = Box3D(x, y, max(z, 0.25), 0.5, 0.5, 0.5, 0.0)
        return ObjectNode(nid, label, box, (x, y, z), self._geo(x, y), t)

    def upsert_object(self, node: ObjectNode) -> str:
        """Insert a new object node or refresh an existing one in place."""
        existing = self.objects.get(node.id)
        self.objects[node.id] = node
        self.revision += 1
        return "updated" if existing is not None else "inserted"

    def log_ego(self, position, velocity, t: float):
        """Append an ego node when displacement clears the spacing threshold."""
        if self.ego_nodes:
            last = self.ego_nodes[-1]
            dist = math.hypot(position[0] - last.position[0], position[1] - last.position[1])
            if dist < self.ego_spacing_m:
                return None
            node = EgoNode(last.id + 1, tuple(position), tuple(velocity), t)
            edge = TrajectoryEdge(last.id, node.id, dist)
            self.ego_nodes.append(node)
            self.trajectory_edges.append(edge)
            self.revision += 1
            return node, edge
        node = EgoNode(EGO_ID_BASE, tuple(position), tuple(velocity), t)
        self.ego_nodes.append(node)
        self.revision += 1
        return node, None

    def _detach(self, child_id: int):
        parent_id = self.parent_of.pop(child_id, None)
        if parent_id is None:
            return
        parent = self.clusters.get(parent_id)
        if parent is None:
            return
        parent.members = tuple(m for m in parent.members if m != child_id)
        if parent.members:
            positions = np.array([self.node_by_id(m).position for m in parent.members])
            c = positions.mean(axis=0)
            parent.position = (float(c[0]), float(c[1]), float(c[2]))
            parent.geo = self._geo(c[0], c[1])
        else:
            del self.clusters[parent_id]
            self._detach(parent_id)

    def remove_corridors(self, removal_ids) -> int:
        """Drop object nodes whose corridors are flagged, cascading upward
        through any cluster left empty."""
        removed = 0
        for nid in sorted(removal_ids):
            if nid in self.objects:
                del self.objects[nid]
                self._detach(nid)
                removed += 1
        if removed:
            self.revision += 1
        return removed

    # -- clustering --------------------------------------------------------

    def _summary(self, member_labels) -> str:
        key = tuple(sorted(member_labels))
        cached = self._summary_cache.get(key)
        if cached is None:
            cached = self.provider.summarize(list(key))
            self._summary_cache[key] = cached
        return cached

    def _agglomerate(self, pool, cfg: ClusterConfig):
        """Average-linkage groups over 1-similarity; returns merged groups
        (size >= 2) as lists of node ids, deterministically ordered."""
        nodes = sorted(pool, key=lambda n: n.id)
        sim = {}
        for i, a in enumerate(nodes):
            for b in nodes[i + 1:]:
                sim[(a.id, b.id)] = pairwise_similarity(a, b, cfg, self._embed)

        def pair_sim(x, y):
            return sim[(x, y)] if x < y else sim[(y, x)]

        groups = [[n.id] for n in nodes]
        while len(groups) > 1:
            best = None
            best_sim = -1.0
            for i in range(len(groups)):
                for j in range(i + 1, len(groups)):
                    s = sum(pair_sim(x, y) for x in groups[i] for y in groups[j])
                    s /= len(groups[i]) * len(groups[j])
                    if s > best_sim:
                        best_sim = s
                        best = (i, j)
            if best is None or best_sim < cfg.merge_threshold:
                break
            i, j = best
            merged = sorted(groups[i] + groups[j])
            groups = [g for k, g in enumerate(groups) if k not in (i, j)]
            groups.append(merged)
            groups.sort(key=lambda g: g[0])
        return [g for g in groups if len(g) >= 2]

    def hierarchical_cluster(self, cfg: ClusterConfig = None):
        """Rebuild every level above the objects; returns new cluster nodes.

        Buildings join the pass from their own level upward. Recursion stops
        at the first level with no merge, or at the configured level cap.
        """
        cfg = cfg or self.cluster_cfg
        self.clusters.clear()
        self.parent_of.clear()
        created = []
        level = OBJECT_LEVEL
        while level < cfg.max_levels:
            pool = []
            if level == OBJECT_LEVEL:
                pool.extend(self.objects.values())
            else:
                pool.extend(c for c in created if c.level == level)
            if level == BUILDING_LEVEL:
                pool.extend(self.buildings.values())
            if len(pool) < 2:
                break
            groups = self._agglomerate(pool, cfg)
            if not groups:
                break
            seq = 0
            for group in groups:
                members = tuple(group)
                positions = np.array([self.node_by_id(m).position for m in members])
                c = positions.mean(axis=0)
                labels = [self.node_by_id(m).label for m in members]
                cid = CLUSTER_ID_BASE + (level + 1) * _CLUSTER_LEVEL_STRIDE + seq
                seq += 1
                node = ClusterNode(cid, self._summary(labels),
                                   (float(c[0]), float(c[1]), float(c[2])),
                                   self._geo(c[0], c[1]), level + 1, members)
                self.clusters[cid] = node
                for m in members:
                    self.parent_of[m] = cid
                created.append(node)
            level += 1
        self.revision += 1
        return created

    # -- the per-cycle pipeline --------------------------------------------

    def _adopt_bootstrap(self, node: ObjectNode):
        """A live track takes over a same-label offline-map object nearby."""
        for nid in sorted(self.objects):
            if nid < BOOTSTRAP_ID_BASE or nid >= BUILDING_ID_BASE:
                continue
            other = self.objects[nid]
            if other.label != node.label:
                continue
            d = math.hypot(other.position[0] - node.position[0],
                           other.position[1] - node.position[1])
            if d <= self.adopt_radius_m:
                del self.objects[nid]
                self._detach(nid)
                self.revision += 1
                return

    def update_cycle(self, detections, ego, t: float) -> int:
        """One full graph update against a fresh detection batch."""
        return self.apply_tracks(self.tracker.update_tracks(detections, ego, t), ego, t)

    def apply_tracks(self, tracks, ego, t: float) -> int:
        """The graph half of an update cycle, fed already-associated tracks.

        Callers that run tracking on a faster clock than the graph pass
        immutable track views here so the two clocks never share state.
        """
        cfg = self.tracker.cfg

        for tr in tracks:
            is_new = tr.id not in self.objects
            if is_new and tr.motion_class == DYNAMIC:
                continue  # would be deleted by the removal pass below
            if is_new and tr.motion_class == QUASI_STATIC and not tr.settled_for(
                    t, cfg.quasi_static_window):
                continue  # moved recently; admit once it has settled
            node = self.make_object(tr.id, tr.label, tr.position(), tr.box(), t)
            if is_new:
                self._adopt_bootstrap(node)
            self.upsert_object(node)

        self.remove_corridors(dynamic_removal_set(tracks, cfg))
        pose = ego.pose
        self.log_ego((pose.x, pose.y, 0.0), tuple(ego.velocity), t)
        self.hierarchical_cluster()
        return self.revision

    # -- persistence -------------------------------------------------------

    def to_document(self) -> dict:
        def geo(g: GeoPoint):
            return [round(g.lat_deg, 9), round(g.lon_deg, 9)]

        levels: dict = {}

        def put(level, doc):
            levels.setdefault(str(level), []).append(doc)

        for nid in sorted(self.objects):
            n = self.objects[nid]
            put(n.level, {
                "id": n.id, "kind": "object", "label": n.label,
                "position": list(n.position), "geo": geo(n.geo),
                "box": {"length": n.box.length, "width": n.box.width,
                        "height": n.box.height, "yaw": n.box.yaw},
                "last_updated": n.last_updated,
            })
        for nid in sorted(self.buildings):
            n = self.buildings[nid]
            put(n.level, {
                "id": n.id, "kind": "building", "label": n.label,
                "position": list(n.position), "geo": geo(n.geo),
            })
        for nid in sorted(self.clusters):
            n = self.clusters[nid]
            put(n.level, {
                "id": n.id, "kind": "cluster", "label": n.label,
                "position": list(n.position), "geo": geo(n.geo),
            })

        membership = sorted(
            (parent, child) for child, parent in self.parent_of.items()
        )
        return {
            "version": 1,
            "revision": self.revision,
            "anchor": {"lat_deg": self.anchor.lat_deg, "lon_deg": self.anchor.lon_deg},
            "levels": levels,
            "ego_nodes": [
                {"id": e.id, "position": list(e.position),
                 "velocity": list(e.velocity), "t": e.timestamp}
                for e in self.ego_nodes
            ],
            "edges": {
                "trajectory": [[e.a, e.b] for e in self.trajectory_edges],
                "membership": [[p, c] for p, c in membership],
            },
        }

    @staticmethod
    def from_document(doc: dict, provider=None, embedder=embedding.embed) -> "SceneGraph":
        validate_document(doc, "graph_snapshot", expected_version=1)
        g = SceneGraph(GeoPoint(doc["anchor"]["lat_deg"], doc["anchor"]["lon_deg"]),
                       provider=provider, embedder=embedder)

        for level_str, nodes in doc["levels"].items():
            level = int(level_str)
            for nd in nodes:
                gp = GeoPoint(nd["geo"][0], nd["geo"][1])
                pos = tuple(nd["position"])
                if nd["kind"] == "object":
                    b = nd["box"]
                    g.objects[nd["id"]] = ObjectNode(
                        nd["id"], nd["label"],
                        Box3D(pos[0], pos[1], pos[2], b["length"], b["width"],
                              b["height"], b["yaw"]),
                        pos, gp, nd.get("last_updated", 0.0), level)
                elif nd["kind"] == "building":
                    g.buildings[nd["id"]] = BuildingNode(nd["id"], nd["label"], pos, gp, level)
                else:
                    g.clusters[nd["id"]] = ClusterNode(nd["id"], nd["label"], pos, gp,
                                                       level, ())

        for e in doc["ego_nodes"]:
            g.ego_nodes.append(EgoNode(e["id"], tuple(e["position"]),
                                       tuple(e["velocity"]), e["t"]))
        ego_by_id = {e.id: e for e in g.ego_nodes}
        for a, b in doc["edges"]["trajectory"]:
            if a not in ego_by_id or b not in ego_by_id:
                raise MalformedDocument(f"trajectory edge ({a}, {b}) references unknown ego node")
            pa, pb = ego_by_id[a].position, ego_by_id[b].position
            g.trajectory_edges.append(
                TrajectoryEdge(a, b, math.hypot(pb[0] - pa[0], pb[1] - pa[1])))

        members: dict = {}
        for parent, child in doc["edges"]["membership"]:
            if child in g.parent_of:
                raise MalformedDocument(f"node {child} has two parents")
            if parent not in g.clusters:
                raise MalformedDocument(f"membership parent {parent} is not a cluster")
            if g.node_by_id(child) is None:
                raise MalformedDocument(f"membership child {child} unknown")
            g.parent_of[child] = parent
            members.setdefault(parent, []).append(child)
        for cid, node in g.clusters.items():
            node.members = tuple(sorted(members.get(cid, ())))
            if not node.members:
                raise MalformedDocument(f"cluster {cid} has no members")

        g.revision = doc["revision"]
        return g

    def snapshot(self) -> "SceneGraph":
        """Immutable-by-convention copy for readers on other threads."""
        return SceneGraph.from_document(self.to_document(), provider=self.provider,
                                        embedder=self.embedder)
