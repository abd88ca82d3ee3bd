"""End-to-end gate: one test per shipped guarantee, each printing a
single PASS/FAIL line with the measured numbers behind the verdict.

Everything here runs on the deterministic mock scorer, with no network
and no wall-clock dependence except where a check is explicitly about
wall-clock behaviour (loop latency, provider isolation).
"""

import csv
import math
import time
from dataclasses import replace

import numpy as np

from semnav import accel
from semnav.benchmark import benchmark_accuracy, load_cases
from semnav.control import (
    BRAKE,
    BarrierSpec,
    Infeasible,
    MpcConfig,
    RobotState,
    dynamics_step,
    solve_nmpc,
)
from semnav.graph import SceneGraph
from semnav.llm import MockLexicalProvider, provider_from_config
from semnav.planning.grid import FREE, OccupancyGrid
from semnav.planning.roads import dijkstra
from semnav.planning.rrt import RrtParams, informed_rrt_star
from semnav.retrieval import (
    Query,
    RetrievalConfig,
    path_score,
    retrieve,
    softmax_probabilities,
)
from semnav.service.runtime import Engine, RuntimeConfig, run_task
from semnav.service.suites import evaluate_suite, load_scenario, load_suite
from semnav.service.threaded import ServiceRuntime
from semnav.tracking import DYNAMIC, QUASI_STATIC, STATIC, TrackerConfig
from semnav.world import Scenario

from conftest import make_scenario_doc
from stub_llm import StubLlmServer
from test_graph import assert_forest, det
from test_retrieval import fresh_graph, oracle_goal
from test_control import crossing_episode

MODULE_T0 = time.perf_counter()


def report(tag: str, ok: bool, detail: str):
    line = f"{tag}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


# -- goal retrieval -----------------------------------------------------------

ADJECTIVES = ["red", "blue", "rusty", "wooden", "stone", "steel", "green",
              "tall", "broken", "painted"]
NOUNS = ["bench", "hydrant", "mail box", "bike rack", "fountain", "trash can",
         "lamp post", "picnic table", "notice board", "oak tree", "planter",
         "bus stop", "phone booth", "flag pole"]


def random_scene(rng) -> SceneGraph:
    g = fresh_graph()
    n = int(rng.integers(1, 51))
    for i in range(n):
        label = "%s %s" % (ADJECTIVES[int(rng.integers(0, len(ADJECTIVES)))],
                           NOUNS[int(rng.integers(0, len(NOUNS)))])
        g.upsert_object(g.make_object(
            i + 1, label,
            (float(rng.uniform(-100, 100)), float(rng.uniform(-100, 100)))))
    g.hierarchical_cluster()
    return g


def test_a01_level_normalization_and_exhaustive_argmax():
    """1,000 random scenes of up to 50 objects: every level's probabilities
    sum to one, and the beam descent lands on the brute-force best leaf."""
    rng = np.random.default_rng(20260818)
    cfg = RetrievalConfig(sharpness=1.5, spatial_weight=0.5, beam_width=64)
    scorer = MockLexicalProvider()
    t0 = time.perf_counter()
    worst = 0.0
    mismatches = 0
    for _ in range(1000):
        g = random_scene(rng)
        noun = NOUNS[int(rng.integers(0, len(NOUNS)))]
        adj = ADJECTIVES[int(rng.integers(0, len(ADJECTIVES)))]
        q = Query(f"find the {adj} {noun}",
                  (float(rng.uniform(-60, 60)), float(rng.uniform(-60, 60)), 0.0))
        node, trace = retrieve(q, g, cfg)
        for level in trace.levels:
            worst = max(worst, abs(sum(level.pi.values()) - 1.0))
        if node.id != oracle_goal(g, q, cfg, scorer):
            mismatches += 1
    dt = time.perf_counter() - t0
    report("A1 level normalization + exhaustive argmax",
           worst <= 1e-9 and mismatches == 0 and dt < 30.0,
           f"1000 scenes, max |sum(pi)-1| {worst:.2e}, "
           f"{mismatches} argmax mismatches, {dt:.1f}s")


def _tables(rng, levels):
    """One softmax table per level from random raw scores."""
    return [softmax_probabilities({nid: float(rng.uniform(0, 1)) for nid in ids}, 1.5)
            for ids in levels]


def test_a02_path_products_match_brute_force():
    rng = np.random.default_rng(7)
    worst = 0.0
    bad_zero = 0
    checked = 0

    # two parents per level, three levels deep
    parent_of = {1: 110, 2: 110, 3: 111, 4: 111, 5: 112, 6: 112, 7: 113, 8: 113,
                 110: 200, 111: 200, 112: 201, 113: 201}
    levels = [(200, 201), (110, 111, 112, 113), tuple(range(1, 9))]
    tables = _tables(rng, levels)
    for leaf in range(1, 9):
        mid = parent_of[leaf]
        root = parent_of[mid]
        want = tables[0][root] * tables[1][mid] * tables[2][leaf]
        got = path_score((root, mid, leaf), tables, parent_of)
        worst = max(worst, abs(got - want))
        checked += 1
        for wrong_mid in levels[1]:
            if wrong_mid == mid:
                continue
            if path_score((root, wrong_mid, leaf), tables, parent_of) != 0.0:
                bad_zero += 1

    # three roots, three leaves each, two levels
    parent_of2 = {i: 300 + (i - 1) // 3 for i in range(1, 10)}
    levels2 = [(300, 301, 302), tuple(range(1, 10))]
    tables2 = _tables(rng, levels2)
    for leaf in range(1, 10):
        root = parent_of2[leaf]
        want = tables2[0][root] * tables2[1][leaf]
        got = path_score((root, leaf), tables2, parent_of2)
        worst = max(worst, abs(got - want))
        checked += 1
        for wrong_root in levels2[0]:
            if wrong_root == root:
                continue
            if path_score((wrong_root, leaf), tables2, parent_of2) != 0.0:
                bad_zero += 1

    report("A2 path products vs brute force",
           worst <= 1e-12 and bad_zero == 0,
           f"{checked} paths, max |err| {worst:.2e}, "
           f"{bad_zero} invalid hops with nonzero score")


# -- corridor filtering -------------------------------------------------------

DYN_LABELS = ("delivery robot", "roaming pedestrian", "cargo scooter")
STATIC_LABELS = ("stone bollard", "mail drop box")
QUASI_LABEL = "idle street sweeper"
BOX = {"length": 0.5, "width": 0.5, "height": 1.6}


def mixed_scene_doc(seed, rng):
    agents = []
    for i, label in enumerate(DYN_LABELS):
        y = -8.0 - 4.0 * i + float(rng.uniform(-1.0, 1.0))
        x0 = float(rng.uniform(-18.0, -12.0))
        x1 = float(rng.uniform(12.0, 18.0))
        speed = float(rng.uniform(1.0, 1.5))
        half = abs(x1 - x0) / speed
        agents.append({"label": label, "box": dict(BOX), "loop": True,
                       "waypoints": [{"t": 0.0, "x": x0, "y": y},
                                     {"t": half, "x": x1, "y": y},
                                     {"t": 2 * half, "x": x0, "y": y}]})
    qx = float(rng.uniform(8.0, 12.0))
    agents.append({"label": QUASI_LABEL, "box": dict(BOX), "loop": False,
                   "waypoints": [{"t": 0.0, "x": qx, "y": 8.0},
                                 {"t": 0.2, "x": qx + 0.3, "y": 8.0},
                                 {"t": 900.0, "x": qx + 0.3, "y": 8.0}]})
    statics = [{"label": lab, "position": [-6.0 + 12.0 * i, 5.0],
                "box": dict(BOX)}
               for i, lab in enumerate(STATIC_LABELS)]
    return make_scenario_doc(name="mixed-motion", seed=seed,
                             sensor={"range_m": 60.0,
                                     "fov_rad": 6.283185307179586,
                                     "noise_sigma_m": 0.0,
                                     "dropout_prob": 0.0},
                             static_objects=statics, dynamic_agents=agents)


def test_a03_corridor_filter_and_departure_latency():
    assert TrackerConfig().k == 5
    cfg = RuntimeConfig(bootstrap_labels=())
    bad = []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        engine = Engine(Scenario.from_dict(mixed_scene_doc(seed, rng)), cfg)
        for _ in range(8 * 60):
            engine.tick()
        by_class = {DYNAMIC: set(), STATIC: set(), QUASI_STATIC: set()}
        for view in engine.views:
            by_class[view.motion_class].add(view.label)
        predicted = by_class[DYNAMIC]
        truth = set(DYN_LABELS)
        precision = len(predicted & truth) / len(predicted) if predicted else 0.0
        recall = len(predicted & truth) / len(truth)
        graph_labels = {o.label for o in engine.graph.objects.values()}
        if not (precision == 1.0 and recall == 1.0
                and not (graph_labels & truth)
                and set(STATIC_LABELS) <= graph_labels
                and QUASI_LABEL in graph_labels):
            bad.append(seed)

    # parked vehicle that pulls away: gone within one 1 Hz cycle of its
    # fifth moving frame
    doc = make_scenario_doc(
        name="departure", seed=5,
        sensor={"range_m": 60.0, "fov_rad": 6.283185307179586,
                "noise_sigma_m": 0.0, "dropout_prob": 0.0},
        dynamic_agents=[{"label": "parked delivery van",
                         "box": {"length": 4.0, "width": 1.8, "height": 2.0},
                         "loop": False,
                         "waypoints": [{"t": 0.0, "x": 10.0, "y": 6.0},
                                       {"t": 4.0, "x": 10.0, "y": 6.0},
                                       {"t": 14.0, "x": 22.0, "y": 6.0}]}])
    engine = Engine(Scenario.from_dict(doc), cfg)
    was_present = False
    t_fifth = None
    t_gone = None
    for _ in range(7 * 60):
        engine.tick()
        labels = {o.label for o in engine.graph.objects.values()}
        if "parked delivery van" in labels:
            was_present = True
        if t_fifth is None:
            for view in engine.views:
                if view.label == "parked delivery van" and view.displacement_steps >= 5:
                    t_fifth = engine.world.t
        if (was_present and t_fifth is not None and t_gone is None
                and "parked delivery van" not in labels):
            t_gone = engine.world.t
    lag = (t_gone - t_fifth) if (t_fifth is not None and t_gone is not None) else math.inf
    report("A3 corridor filter soundness + departure latency",
           not bad and was_present and lag <= 1.0,
           f"20 seeds precision=recall=1.0 (bad: {bad or 'none'}), "
           f"van removed {lag:.2f}s after fifth moving frame")


# -- graph update semantics ---------------------------------------------------

def test_a04_update_idempotence_centroids_forest():
    # idempotence: the same world re-observed never changes the node count
    g = fresh_graph()
    batch = [det("bench", 5.0, 0.0, 0.0), det("bench", -5.0, 2.0, 0.0),
             det("oak tree", 20.0, 8.0, 0.0), det("fire hydrant", 3.0, -9.0, 0.0)]

    class _Ego:
        pose = type("P", (), {"x": 0.0, "y": 0.0, "heading": 0.0})()
        velocity = (0.0, 0.0)

    def stamped(t):
        return [replace(d, t=t) for d in batch]

    g.update_cycle(stamped(0.0), _Ego, 0.0)
    g.update_cycle(stamped(1.0), _Ego, 1.0)
    count = len(g.objects) + len(g.clusters)
    stable = True
    for k in range(2, 12):
        g.update_cycle(stamped(float(k)), _Ego, float(k))
        if len(g.objects) + len(g.clusters) != count:
            stable = False

    # randomized churn: forest and centroid invariants after every cycle
    rng = np.random.default_rng(99)
    g2 = fresh_graph()
    labels = [f"{a} {n}" for a in ADJECTIVES[:5] for n in NOUNS[:6]]
    live = {}
    cycles = 0
    for k in range(1000):
        t = float(k)
        if len(live) < 25 and rng.random() < 0.5:
            nid = len(live) + 1
            live[nid] = [labels[int(rng.integers(0, len(labels)))],
                         float(rng.uniform(-60, 60)), float(rng.uniform(-60, 60))]
        for row in live.values():
            if rng.random() < 0.3:
                row[1] += float(rng.uniform(-0.02, 0.02))
                row[2] += float(rng.uniform(-0.02, 0.02))
        dets = [det(lab, x, y, t) for lab, x, y in live.values()]
        if dets:
            g2.update_cycle(dets, _Ego, t)
            assert_forest(g2)
            cycles += 1
    report("A4 update idempotence + centroid/forest invariants",
           stable and cycles > 900,
           f"node count stable over 10 re-observations, "
           f"forest checked after {cycles} randomized cycles")


# -- control ------------------------------------------------------------------

def test_a05_gradients_barrier_safety_zero_error():
    # analytic gradient vs central differences at 100 random points
    rng = np.random.default_rng(2024)
    n = 8
    dt = 0.1
    q = np.array([2.0, 2.0, 0.0, 0.3])
    r = np.array([0.1, 0.05])
    checked = 0
    attempts = 0
    worst_rel = 0.0
    while checked < 100 and attempts < 400:
        attempts += 1
        x0 = np.array([rng.uniform(-3, 3), rng.uniform(-3, 3), 0.0,
                       rng.uniform(-2.5, 2.5)])
        us = np.column_stack([rng.uniform(-0.5, 2.0, n),
                              rng.uniform(-1.5, 1.5, n)])
        refs = np.column_stack([rng.uniform(-4, 4, n), rng.uniform(-4, 4, n),
                                np.zeros(n), rng.uniform(-2.5, 2.5, n)])
        spec = BarrierSpec.from_tracks(
            [(rng.uniform(-3, 3), rng.uniform(-3, 3),
              rng.uniform(-1, 1), rng.uniform(-1, 1)) for _ in range(2)],
            n, dt, d_safe=1.0)
        obs = spec.predictions
        ds2 = np.full(2, 1.0)
        lam = np.full(n, 0.2)
        mu = np.abs(rng.normal(0.0, 2.0, (2, n)))
        rho = float(rng.choice([1.0, 10.0, 100.0]))
        _, _, grad, cons = accel.nmpc_value_grad(
            x0, us, dt, refs, q, r, obs, ds2, lam, mu, rho)
        if np.min(np.abs(mu - rho * cons)) < 1e-3:
            continue  # too close to the hinge for finite differences
        eps = 1e-5
        for idx in range(n * 2):
            k, j = divmod(idx, 2)
            up = us.copy(); up[k, j] += eps
            um = us.copy(); um[k, j] -= eps
            fp = accel.nmpc_value_grad(x0, up, dt, refs, q, r, obs, ds2,
                                       lam, mu, rho)[0]
            fm = accel.nmpc_value_grad(x0, um, dt, refs, q, r, obs, ds2,
                                       lam, mu, rho)[0]
            fd = (fp - fm) / (2 * eps)
            rel = abs(grad[k, j] - fd) / max(abs(fd), abs(grad[k, j]), 1.0)
            worst_rel = max(worst_rel, rel)
        checked += 1
    grads_ok = checked == 100 and worst_rel < 1e-4

    # 50 seeded crossing episodes: barrier held in >= 48, zero collisions
    clean = 0
    collision_free = True
    for seed in range(50):
        min_h, min_dist, _, _ = crossing_episode(seed)
        if min_h >= 0.0:
            clean += 1
        if min_dist <= 0.35:
            collision_free = False

    # exact tracking: nothing to correct, so the solver returns no motion
    cfg = MpcConfig()
    ref = [(0.0, 0.0, 0.0, 0.0)] * cfg.horizon
    u, _, _ = solve_nmpc(RobotState(0.0, 0.0, 0.0, 0.0), ref,
                         BarrierSpec.from_tracks([], cfg.horizon, cfg.dt), cfg)
    zero_ok = abs(u.v) <= 1e-6 and abs(u.omega) <= 1e-6

    report("A5 gradient oracle + barrier safety + zero-error control",
           grads_ok and clean >= 48 and collision_free and zero_ok,
           f"100 points worst rel err {worst_rel:.2e}, "
           f"min_h>=0 in {clean}/50, all collision-free={collision_free}, "
           f"|u|=({abs(u.v):.1e},{abs(u.omega):.1e})")


# -- planners -----------------------------------------------------------------

def _route_len(points) -> float:
    return sum(math.dist(a[:2], b[:2]) for a, b in zip(points, points[1:]))


def best_path_bruteforce(adj, source, target):
    """Branch-and-bound over all simple paths."""
    best = [math.inf]

    def walk(u, cost, seen):
        if cost >= best[0]:
            return
        if u == target:
            best[0] = cost
            return
        for v, w in adj.get(u, ()):
            if v not in seen:
                seen.add(v)
                walk(v, cost + w, seen)
                seen.remove(v)

    walk(source, 0.0, {source})
    return best[0]


def test_a06_sampling_path_quality_and_shortest_paths():
    grid = OccupancyGrid.around(0.0, 0.0, 40.0)
    grid.state[:] = FREE
    rng = np.random.default_rng(4242)
    good = 0
    for trial in range(100):
        while True:
            s = (float(rng.uniform(-16, 16)), float(rng.uniform(-16, 16)), 0.0)
            t = (float(rng.uniform(-16, 16)), float(rng.uniform(-16, 16)), 0.0)
            base = math.dist(s[:2], t[:2])
            if base >= 12.0:
                break
        traj = informed_rrt_star(s, t, grid, RrtParams(seed=trial, max_iters=2500))
        if _route_len(traj.points) <= 1.05 * base:
            good += 1

    # shortest paths on random sparse fixtures vs exhaustive enumeration
    exact = 0
    fixtures = 0
    for fi in range(12):
        frng = np.random.default_rng(900 + fi)
        n = int(frng.integers(4, 51))
        adj = {i: [] for i in range(n)}

        def connect(a, b, w):
            adj[a].append((b, w))
            adj[b].append((a, w))

        for i in range(1, n):
            connect(i, int(frng.integers(0, i)), float(frng.uniform(0.5, 10.0)))
        for _ in range(n // 4):
            a, b = int(frng.integers(0, n)), int(frng.integers(0, n))
            if a != b:
                connect(a, b, float(frng.uniform(0.5, 10.0)))
        path, cost = dijkstra(adj, 0, n - 1)
        want = best_path_bruteforce(adj, 0, n - 1)
        recomputed = 0.0
        for a, b in zip(path, path[1:]):
            recomputed += dict(adj[a])[b]
        fixtures += 1
        if cost == want and recomputed == cost:
            exact += 1

    report("A6 sampling-path quality + shortest-path exactness",
           good >= 90 and exact == fixtures,
           f"within 1.05x Euclidean in {good}/100 empty-grid trials, "
           f"{exact}/{fixtures} fixtures exactly optimal")


# -- evaluation harness -------------------------------------------------------

def test_a07_update_ablation_gap():
    suite = load_suite("suite_dynamic")
    t0 = time.perf_counter()
    metrics_on, rows_on = evaluate_suite(suite, updates=True)
    metrics_off, rows_off = evaluate_suite(suite, updates=False)
    dt = time.perf_counter() - t0
    gap = metrics_on.success_rate - metrics_off.success_rate
    report("A7 live-update ablation",
           len(rows_on) == 250 and len(rows_off) == 250 and gap >= 0.05,
           f"SR on {metrics_on.success_rate:.3f} vs off "
           f"{metrics_off.success_rate:.3f}, gap {gap * 100:.1f}pp, "
           f"{len(rows_on)}+{len(rows_off)} episodes, {dt:.0f}s")


def test_a08_weight_sweep_is_bell_shaped():
    doc = load_cases()
    acc_a = {a: benchmark_accuracy(semantic_weight=a, doc=doc)
             for a in (0.1, 0.5, 0.9)}
    acc_b = {b: benchmark_accuracy(spatial_weight=b, doc=doc)
             for b in (0.1, 0.5, 0.9)}
    ok = (acc_a[0.5] >= acc_a[0.1] and acc_a[0.5] >= acc_a[0.9]
          and acc_b[0.5] >= acc_b[0.1] and acc_b[0.5] >= acc_b[0.9])
    report("A8 clustering/retrieval weight sweep",
           ok,
           "semantic 0.1/0.5/0.9 -> %.2f/%.2f/%.2f, "
           "spatial 0.1/0.5/0.9 -> %.2f/%.2f/%.2f" %
           (acc_a[0.1], acc_a[0.5], acc_a[0.9],
            acc_b[0.1], acc_b[0.5], acc_b[0.9]))


# -- latency ------------------------------------------------------------------

def _suite_config(suite, updates=True) -> RuntimeConfig:
    base = RuntimeConfig()
    fields = {name: getattr(base, name) for name in base.__dataclass_fields__}
    boot = suite.get("bootstrap_labels")
    fields.update(
        graph_updates=updates,
        success_radius_m=float(suite.get("success_radius_m", base.success_radius_m)),
        bootstrap_labels=None if boot is None else tuple(boot),
        retrieval=replace(base.retrieval, **suite.get("retrieval", {})),
        cluster=replace(base.cluster, **suite.get("cluster", {})))
    return RuntimeConfig(**fields)


def test_a09_local_loop_latency_and_provider_isolation():
    # medium scenario, in-process: p95 of the 10 Hz loop under 100 ms
    suite = load_suite("suite_dynamic")
    task = suite["tasks"][0]
    engine = Engine(load_scenario(suite["scenario"]), _suite_config(suite),
                    seed=suite["seed_base"])
    scenario = engine.scenario
    target = None
    for obj in scenario.static_objects:
        if obj.label == task["target_label"]:
            target = (obj.position[0], obj.position[1])
    nav_task, _ = run_task(task["instruction"], engine, target_position=target,
                           task_name=task["id"])
    local = engine.latency_summary()["local"]
    inproc_ok = nav_task.status == "succeeded" and local["p95_ms"] <= 100.0

    # a slow remote scorer must not touch the control clock: the wall-clock
    # host keeps ticking while retrieval waits on the 2 s endpoint
    with StubLlmServer(response_text="0.7", delay_s=2.0) as stub:
        provider = provider_from_config(
            {"endpoint": stub.url, "timeout_s": 8.0, "fallback_to_mock": "0"})
        rt = ServiceRuntime(load_scenario("empty_short"), provider=provider)
        rt.start()
        try:
            rt.submit_instruction("find the wooden park bench")
            deadline = time.time() + 20.0
            while time.time() < deadline:
                if stub.requests and rt.engine.world.t >= 4.0:
                    break
                time.sleep(0.05)
            stub_calls = len(stub.requests)
            sim_t = rt.engine.world.t
            stub_local = rt.engine.latency_summary()["local"]
        finally:
            rt.stop()
    stub_ok = stub_calls >= 1 and sim_t >= 4.0 and stub_local["p95_ms"] <= 100.0

    report("A9 local-loop latency + slow-provider isolation",
           inproc_ok and stub_ok,
           f"in-process p95 {local['p95_ms']:.1f}ms over {local['count']} cycles; "
           f"with 2s scorer p95 {stub_local['p95_ms']:.1f}ms over "
           f"{stub_local['count']} cycles, {stub_calls} stub calls, "
           f"sim clock reached {sim_t:.1f}s")


# -- determinism --------------------------------------------------------------

def test_a10_repeat_runs_are_byte_identical(tmp_path):
    from semnav.service.suites import write_outputs

    suite = load_suite("suite_smoke")
    outputs = []
    for arm in ("first", "second"):
        metrics, rows = evaluate_suite(suite, updates=True)
        outputs.append(write_outputs(tmp_path / arm, suite["name"], True,
                                     metrics, rows))
    csv_a = open(outputs[0]["csv"], "rb").read()
    csv_b = open(outputs[1]["csv"], "rb").read()
    sum_a = open(outputs[0]["summary"], "rb").read()
    sum_b = open(outputs[1]["summary"], "rb").read()
    rows_n = len(csv_a.splitlines()) - 1

    default_provider = type(Engine(load_scenario("empty_short")).provider).__name__
    elapsed = time.perf_counter() - MODULE_T0
    report("A10 determinism + offline budget",
           csv_a == csv_b and sum_a == sum_b
           and default_provider == "MockLexicalProvider" and elapsed < 840.0,
           f"two runs byte-identical over {rows_n} episodes, "
           f"default scorer {default_provider}, "
           f"gate elapsed {elapsed:.0f}s")
