"""Bundled goal-retrieval benchmark.

Fifteen fixed scenes, each a handful of labeled-object zones around an agent
at the origin, plus a query and the index of the object the query is about.
A run rebuilds every scene's hierarchy under the requested clustering blend,
retrieves with the requested spatial blend, and counts exact goal matches.

The case file pins every other knob (sharpness, kernel scale, beam width)
so that sweeping one weight moves accuracy for one reason only.
"""

from importlib import resources

from semnav.formats import validate_document
from semnav.geometry import GeoPoint
from semnav.graph import ClusterConfig, SceneGraph
from semnav.retrieval import Query, RetrievalConfig, retrieve

_ANCHOR = GeoPoint(37.4, -122.1)


def load_cases() -> dict:
    ref = resources.files("semnav").joinpath(
        "data", "benchmarks", "retrieval_cases.json")
    import json
    with ref.open("r", encoding="utf-8") as fh:
        return validate_document(json.load(fh), "benchmark")


def _run_case(doc: dict, case: dict, semantic_weight: float,
              spatial_weight: float):
    knobs = doc["config"]
    graph = SceneGraph(_ANCHOR, cluster_cfg=ClusterConfig(
        semantic_weight=semantic_weight,
        kernel_scale_m=knobs["kernel_scale_m"],
        merge_threshold=knobs["merge_threshold"],
        max_levels=knobs["max_levels"]))
    for i, obj in enumerate(case["objects"]):
        x, y = obj["position"]
        graph.upsert_object(graph.make_object(i + 1, obj["label"], (x, y, 0.0)))
    graph.hierarchical_cluster()
    ax, ay = doc["agent"]
    goal, trace = retrieve(
        Query(case["query"], (ax, ay, 0.0)), graph,
        RetrievalConfig(sharpness=knobs["sharpness"],
                        spatial_weight=spatial_weight,
                        kernel_scale_m=knobs["kernel_scale_m"],
                        beam_width=knobs["beam_width"],
                        top_n=knobs["top_n"]))
    return goal, trace


def benchmark_accuracy(semantic_weight: float = 0.5,
                       spatial_weight: float = 0.5,
                       doc: dict = None) -> float:
    """Fraction of cases whose retrieved goal is exactly the named object."""
    doc = doc or load_cases()
    hits = 0
    for case in doc["cases"]:
        goal, _ = _run_case(doc, case, semantic_weight, spatial_weight)
        hits += goal.id == case["truth_index"] + 1
    return hits / len(doc["cases"])
