"""Batch evaluation: drive a task suite through fresh engines and score it.

A suite binds one scenario to a list of (instruction, truth target) pairs,
a trial count, and a seed base. Every episode gets its own engine, so no
state crosses episodes, and the seed schedule is a pure function of the
suite document. Episodes never abort the batch: engine errors become
failed rows with the error class as the reason.
"""

import json
import math
from dataclasses import replace
from importlib import resources
from pathlib import Path

from semnav.formats import MalformedDocument, read_json, validate_document
from semnav.service.metrics import EpisodeRow, compute_metrics, rows_to_csv
from semnav.service.runtime import Engine, RuntimeConfig, TaskError, run_task
from semnav.world import Scenario

SMALL_MAX_M = 15.0
MEDIUM_MAX_M = 30.0


def episode_seed(seed_base: int, task_index: int, trial: int) -> int:
    return seed_base + task_index * 101 + trial


def _bundled(kind: str, name: str):
    ref = resources.files("semnav").joinpath("data", kind, f"{name}.json")
    return ref if ref.is_file() else None


def load_scenario_doc(name_or_path: str) -> dict:
    """Raw scenario document, bundled by bare name or from a path."""
    ref = _bundled("scenarios", name_or_path)
    if ref is not None:
        with ref.open("r", encoding="utf-8") as fh:
            return json.load(fh)
    path = Path(name_or_path)
    if not path.is_file():
        raise FileNotFoundError(f"no bundled or local scenario {name_or_path!r}")
    return read_json(path)


def load_scenario(name_or_path: str) -> Scenario:
    """Bundled scenario by bare name, else a filesystem path."""
    return Scenario.from_dict(load_scenario_doc(name_or_path))


def load_suite(name_or_path: str) -> dict:
    ref = _bundled("suites", name_or_path)
    if ref is not None:
        with ref.open("r", encoding="utf-8") as fh:
            doc = json.load(fh)
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise FileNotFoundError(f"no bundled or local suite {name_or_path!r}")
        doc = read_json(path)
    return validate_document(doc, "suite", expected_version=1)


def _truth_position(scenario: Scenario, label: str):
    for s in scenario.static_objects:
        if s.label == label:
            return (s.position[0], s.position[1])
    raise MalformedDocument(f"suite target {label!r} not in scenario statics")


def size_class(shortest_m: float) -> str:
    if shortest_m < SMALL_MAX_M:
        return "small"
    if shortest_m < MEDIUM_MAX_M:
        return "medium"
    return "large"


def _error_row(task_doc, trial, seed, updates, shortest, exc) -> EpisodeRow:
    return EpisodeRow(
        task=task_doc["id"], trial=trial, seed=seed, updates=updates,
        success=False, shortest_m=max(shortest, 1e-9), traveled_m=0.0,
        collisions=0, sim_time_s=0.0, status="failed",
        reason=type(exc).__name__)


def evaluate_suite(suite: dict, updates: bool = True, config: RuntimeConfig = None,
                   provider=None, progress=None):
    """Run every (task, trial) episode; returns (MetricsRecord, rows).

    The updates flag freezes or enables graph maintenance for the whole
    batch; everything else comes from the suite document.
    """
    scenario = load_scenario(suite["scenario"])
    base_cfg = config or RuntimeConfig()
    boot = suite.get("bootstrap_labels")
    cfg = RuntimeConfig(
        **{**_public_fields(base_cfg),
           "graph_updates": updates,
           "success_radius_m": float(suite.get("success_radius_m",
                                               base_cfg.success_radius_m)),
           "bootstrap_labels": None if boot is None else tuple(boot),
           "retrieval": replace(base_cfg.retrieval, **suite.get("retrieval", {})),
           "cluster": replace(base_cfg.cluster, **suite.get("cluster", {}))})

    rows = []
    for ti, task_doc in enumerate(suite["tasks"]):
        target = _truth_position(scenario, task_doc["target_label"])
        for trial in range(int(suite["trials"])):
            seed = episode_seed(int(suite["seed_base"]), ti, trial)
            engine = Engine(scenario, cfg, provider=provider, seed=seed)
            start = scenario.ego_start
            shortest = math.hypot(target[0] - start.x, target[1] - start.y)
            try:
                _, row = run_task(task_doc["instruction"], engine,
                                  target_position=target,
                                  task_name=task_doc["id"], trial=trial)
            except TaskError as exc:
                row = exc.row if exc.row is not None else _error_row(
                    task_doc, trial, seed, updates, shortest, exc)
            except Exception as exc:  # noqa: BLE001 - batch must survive
                row = _error_row(task_doc, trial, seed, updates, shortest, exc)
            rows.append(row)
            if progress is not None:
                progress(row)
    return compute_metrics(rows), rows


def _public_fields(cfg: RuntimeConfig) -> dict:
    return {name: getattr(cfg, name) for name in cfg.__dataclass_fields__}


def summarize(name: str, updates: bool, metrics, rows) -> dict:
    by_size = {}
    for bucket in ("small", "medium", "large"):
        subset = [r for r in rows if size_class(r.shortest_m) == bucket]
        if subset:
            m = compute_metrics(subset)
            by_size[bucket] = {"episodes": len(subset), "sr": m.sr,
                               "spl": m.spl, "cc": m.cc, "tl": m.tl}
    return {
        "suite": name,
        "updates": updates,
        "episodes": len(rows),
        "sr": metrics.sr,
        "spl": metrics.spl,
        "cc": metrics.cc,
        "tl": metrics.tl,
        "by_size": by_size,
    }


def write_outputs(outdir, name: str, updates: bool, metrics, rows) -> dict:
    """CSV plus summary JSON; returns the file paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    arm = "on" if updates else "off"
    csv_path = outdir / f"{name}_{arm}.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows))
    summary_path = outdir / f"{name}_{arm}_summary.json"
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summarize(name, updates, metrics, rows), fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return {"csv": str(csv_path), "summary": str(summary_path)}
