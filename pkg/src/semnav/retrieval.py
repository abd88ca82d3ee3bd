"""Grounding a language instruction to a goal node in the scene graph.

Descent runs level by level from the hierarchy roots: a relevance scorer
rates each candidate description against the query, the scores pass
through a sharpened softmax, the top beam survives, and survivors'
children form the next round. Finished root-to-leaf paths carry the
product of their per-level probabilities; when the caller knows where
the agent is, leaves are re-ranked by a spatial/semantic blend. Every
intermediate quantity lands in the returned trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .geometry import GeoPoint, haversine_m
from .graph import ObjectNode, SceneGraph


class EmptyCandidateSet(ValueError):
    """No nodes to normalize over."""


class MissingLocation(ValueError):
    """Hybrid re-ranking was requested without an agent position."""


class EmptyGraph(ValueError):
    """The graph holds nothing searchable."""


class NoReachableLeaf(ValueError):
    """No root-to-object path exists."""


@dataclass(frozen=True)
class Query:
    """Instruction text, optionally with the agent position in frame meters."""

    text: str
    position: tuple | None = None

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("query text must be non-empty")
        if self.position is not None:
            pos = tuple(float(c) for c in self.position)
            if len(pos) != 3:
                raise ValueError("position must be (x, y, z) meters")
            object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class RetrievalConfig:
    sharpness: float = 1.5
    spatial_weight: float = 0.5
    kernel_scale_m: float = 50.0
    beam_width: int = 3
    top_n: int = 5

    def __post_init__(self):
        if self.sharpness <= 0.0:
            raise ValueError("sharpness must be positive")
        if not (0.0 <= self.spatial_weight <= 1.0):
            raise ValueError("spatial_weight must lie in [0, 1]")
        if self.kernel_scale_m <= 0.0:
            raise ValueError("kernel_scale_m must be positive")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")


@dataclass
class LevelTrace:
    """One descent round: everything scored, everything kept."""

    depth: int
    raw_scores: dict
    probabilities: dict
    sources: dict
    kept: tuple


@dataclass
class PathCandidate:
    leaf_id: int
    nodes: tuple
    path_score: float
    hybrid: float | None = None


@dataclass
class RetrievalTrace:
    query: str
    location_used: bool
    levels: list = field(default_factory=list)
    paths: list = field(default_factory=list)
    goal_id: int = -1

    def to_document(self) -> dict:
        return {
            "version": 1,
            "query": self.query,
            "location_used": self.location_used,
            "goal": self.goal_id,
            "levels": [
                {
                    "depth": lv.depth,
                    "kept": list(lv.kept),
                    "candidates": [
                        {
                            "id": nid,
                            "raw": lv.raw_scores[nid],
                            "pi": lv.probabilities[nid],
                            "source": lv.sources[nid],
                        }
                        for nid in sorted(lv.raw_scores)
                    ],
                }
                for lv in self.levels
            ],
            "paths": [
                {
                    "leaf": p.leaf_id,
                    "nodes": list(p.nodes),
                    "path_score": p.path_score,
                    "hybrid_score": p.hybrid,
                }
                for p in self.paths
            ],
        }


def describe_node(graph: SceneGraph, node) -> str:
    """Candidate description handed to the scorer: label, level, parent,
    and member count when the node aggregates others."""
    parts = [node.label, "level %d" % node.level]
    parent_id = graph.parent_of.get(node.id)
    if parent_id is not None:
        parts.append("in %s" % graph.node_by_id(parent_id).label)
    members = getattr(node, "members", None)
    if members:
        parts.append("%d members" % len(members))
    return "; ".join(parts)


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else (1.0 if v > 1.0 else v)


def _score(scorer, query: str, description: str) -> tuple:
    traced = getattr(scorer, "relevance_traced", None)
    if traced is not None:
        value, source = traced(query, description)
    else:
        value = scorer.relevance(query, description)
        source = getattr(scorer, "name", type(scorer).__name__)
    return _clamp01(float(value)), source


def softmax_probabilities(scores: Mapping, sharpness: float) -> dict:
    """Sharpened softmax over {node id: score}, max-subtracted for stability."""
    if not scores:
        raise EmptyCandidateSet("no candidates to normalize")
    if sharpness <= 0.0:
        raise ValueError("sharpness must be positive")
    peak = max(scores.values())
    weights = {nid: math.exp(sharpness * (s - peak)) for nid, s in scores.items()}
    total = sum(weights.values())
    return {nid: w / total for nid, w in weights.items()}


def level_probabilities(query: str, candidates, sharpness: float, scorer) -> dict:
    """Selection probabilities for one level.

    `candidates` is an iterable of (node id, description) pairs; scores are
    clamped to [0, 1] before normalization so ranking survives any scorer.
    """
    raw = {}
    for nid, description in candidates:
        raw[nid], _ = _score(scorer, query, description)
    return softmax_probabilities(raw, sharpness)


def path_score(path: Sequence, per_level: Sequence, parent_of: Mapping) -> float:
    """Product of the path's per-level probabilities, zero if any hop is
    not a real parent-child link. Path runs root to leaf; `per_level`
    holds one probability table per path node, in the same order."""
    if not path:
        raise ValueError("path must be non-empty")
    if len(per_level) != len(path):
        raise ValueError("need one probability table per path node")
    score = 1.0
    previous = None
    for table, nid in zip(per_level, path):
        if previous is not None and parent_of.get(nid) != previous:
            return 0.0
        score *= table.get(nid, 0.0)
        previous = nid
    return score


def hybrid_score(candidate: GeoPoint, agent: GeoPoint | None, path_product: float,
                 spatial_weight: float, kernel_scale_m: float) -> float:
    """Blend of spatial proximity to the agent and the hierarchical path
    product. Requires a known agent position."""
    if agent is None:
        raise MissingLocation("agent position required for re-ranking")
    if not (0.0 <= path_product <= 1.0):
        raise ValueError("path product must lie in [0, 1]")
    if not (0.0 <= spatial_weight <= 1.0):
        raise ValueError("spatial_weight must lie in [0, 1]")
    if kernel_scale_m <= 0.0:
        raise ValueError("kernel_scale_m must be positive")
    kernel = math.exp(-haversine_m(candidate, agent) / kernel_scale_m)
    return spatial_weight * kernel + (1.0 - spatial_weight) * path_product


def retrieve(query: Query, graph: SceneGraph, cfg: RetrievalConfig = None,
             scorer=None):
    """Resolve a query to an object node plus a full trace.

    Beam descent from the parentless roots; only children of surviving
    nodes are scored at the next round, so invalid hops never appear.
    Ties break toward the lowest node id at every stage.
    """
    cfg = cfg or RetrievalConfig()
    scorer = scorer if scorer is not None else graph.provider
    roots = graph.roots()
    if not roots:
        raise EmptyGraph("graph has no nodes to search")

    agent_geo = None
    if query.position is not None:
        agent_geo = graph.frame.to_geo(query.position[0], query.position[1])

    trace = RetrievalTrace(query.text, agent_geo is not None)
    # frontier entries: (node, path ids so far, probability product before
    # this node). Finished entries: (leaf id, path, full product).
    frontier = [(node, (node.id,), 1.0) for node in roots]
    finished = []
    depth = 0
    while frontier:
        raw, sources = {}, {}
        for node, _, _ in frontier:
            raw[node.id], sources[node.id] = _score(
                scorer, query.text, describe_node(graph, node))
        pi = softmax_probabilities(raw, cfg.sharpness)
        ranked = sorted(pi.items(), key=lambda kv: (-kv[1], kv[0]))
        kept = tuple(nid for nid, _ in ranked[: cfg.beam_width])
        trace.levels.append(LevelTrace(depth, raw, pi, sources, kept))

        kept_set = set(kept)
        next_frontier = []
        for node, path, prefix in frontier:
            if node.id not in kept_set:
                continue
            product = prefix * pi[node.id]
            if isinstance(node, ObjectNode):
                finished.append((node.id, path, product))
                continue
            for child_id in graph.children(node.id):
                child = graph.node_by_id(child_id)
                next_frontier.append((child, path + (child_id,), product))
            # buildings have no children: the path dead-ends here
        frontier = next_frontier
        depth += 1

    if not finished:
        raise NoReachableLeaf("no object node reachable from any root")

    candidates = []
    for leaf_id, path, product in finished:
        eta = None
        if agent_geo is not None:
            leaf = graph.node_by_id(leaf_id)
            eta = hybrid_score(leaf.geo, agent_geo, product,
                               cfg.spatial_weight, cfg.kernel_scale_m)
        candidates.append(PathCandidate(leaf_id, path, product, eta))

    if agent_geo is not None:
        candidates.sort(key=lambda c: (-c.hybrid, c.leaf_id))
    else:
        candidates.sort(key=lambda c: (-c.path_score, c.leaf_id))
    trace.paths = candidates[: cfg.top_n]
    trace.goal_id = candidates[0].leaf_id
    return graph.node_by_id(trace.goal_id), trace
