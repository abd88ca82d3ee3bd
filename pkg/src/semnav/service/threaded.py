"""Wall-clock host for the lockstep engine.

The offline Engine runs every loop on one caller-driven clock. Here the
same engine is split across threads the way the loops run live:

  sim thread    base rate, wall paced: world step, sensing, tracking,
                corridor filter, local plan + control. Applies queued
                commands between ticks, so it stays the single writer.
  graph thread  drains the engine's due graph work. Clustering may call
                a slow scorer; a backlog only makes the semantic layer
                stale, it never stalls the control path.
  task thread   retrieval and global planning per instruction, scored
                against a point-in-time graph copy so a 2 s provider
                call runs with no lock held.
  autosave      optional periodic graph snapshot to disk.

Cross-thread traffic is immutable snapshots and queues: the sim thread
reads the last published objects view, publishes state frames, and
consumes one command queue. Nothing an API handler does can block a
timed loop.
"""

import json
import math
import os
import queue
import threading
import time

from semnav.retrieval import Query, retrieve
from semnav.service.metrics import EpisodeRow, compute_metrics
from semnav.service.runtime import (
    EXECUTING,
    FAILED,
    PLANNING,
    SUCCEEDED,
    Engine,
    RuntimeConfig,
    NavTask,
    global_plan,
)
from semnav.world import DynamicAgentScript

_TERMINAL = (SUCCEEDED, FAILED)
_EVENT_QUEUE_SIZE = 256


def _script_from_payload(payload: dict, now: float) -> DynamicAgentScript:
    """Spawn payload to a script; waypoint times are relative to now."""
    wps = payload.get("waypoints") or ()
    if not wps:
        raise ValueError("spawn needs at least one waypoint")
    box = payload.get("box") or {}
    extents = (float(box.get("length", 0.5)), float(box.get("width", 0.5)),
               float(box.get("height", 1.7)))
    shifted = []
    last = -math.inf
    for w in wps:
        t = float(w["t"])
        if t < 0.0:
            raise ValueError("waypoint times must be >= 0")
        if t <= last:
            raise ValueError("waypoint times must be strictly increasing")
        last = t
        shifted.append((now + t, float(w["x"]), float(w["y"])))
    return DynamicAgentScript(
        label=str(payload.get("label", "injected agent")),
        extents=extents, waypoints=tuple(shifted),
        loop=bool(payload.get("loop", False)))


class ServiceRuntime:
    """Threaded service around one Engine; start() spins the loops up."""

    def __init__(self, scenario, config: RuntimeConfig = None, provider=None,
                 seed=None, autosave_path=None, autosave_interval_s: float = 0.0,
                 episode_log_path=None):
        self.engine = Engine(scenario, config or RuntimeConfig(), provider,
                             seed=seed, graph_mode="external")
        self.cfg = self.engine.config
        self.autosave_path = autosave_path
        self.autosave_interval_s = float(autosave_interval_s)
        self.episode_log_path = episode_log_path

        self._graph_lock = threading.Lock()
        self._tasks_lock = threading.Lock()
        self._sub_lock = threading.Lock()
        self._commands = queue.SimpleQueue()
        self._instructions = queue.Queue()
        self._subscribers = []

        self.tasks = {}
        self.rows = []
        self._next_id = 1
        self._active_id = None
        self._deadline = None
        self._baseline = (0.0, 0, 0.0)   # traveled, collisions, t at EXECUTING
        self.state_frame = self.engine.world_state()

        self._stop = threading.Event()
        self._threads = []
        self._local_every = self.cfg.base_rate_hz // self.cfg.local_rate_hz

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        if self._threads:
            raise RuntimeError("runtime already started")
        loops = [("sim", self._sim_loop), ("graph", self._graph_loop),
                 ("tasks", self._task_loop)]
        if self.autosave_path and self.autosave_interval_s > 0:
            loops.append(("autosave", self._autosave_loop))
        for name, target in loops:
            th = threading.Thread(target=target, name=f"semnav-{name}",
                                  daemon=True)
            th.start()
            self._threads.append(th)
        return self

    def stop(self):
        self._stop.set()
        self._instructions.put(None)
        for th in self._threads:
            th.join(timeout=5.0)
        self._threads = []
        if self.autosave_path:
            self._save_snapshot()

    # -- public surface (API handlers call these) -----------------------------

    def submit_instruction(self, text: str) -> int:
        if not text or not text.strip():
            raise ValueError("instruction must be non-empty")
        world = self.engine.world
        with self._tasks_lock:
            tid = self._next_id
            self._next_id += 1
            pose = world.ego.pose
            task = NavTask(tid, text, (pose.x, pose.y, pose.heading))
            task.timestamps["retrieving"] = world.t
            self.tasks[tid] = task
            old = self.tasks.get(self._active_id)
            if old is not None and old.status not in _TERMINAL:
                old.transition(FAILED, world.t, "superseded")
            self._active_id = tid
        if old is not None and old.status == FAILED and old.reason == "superseded":
            self._publish({"type": "task", "task": old.to_document()})
        self._publish({"type": "task", "task": task.to_document()})
        self._instructions.put(task)
        return tid

    def task_document(self, tid: int):
        with self._tasks_lock:
            task = self.tasks.get(tid)
            return None if task is None else task.to_document()

    def task_trace(self, tid: int):
        with self._tasks_lock:
            task = self.tasks.get(tid)
            if task is None:
                return None
            return {"id": tid, "trace": task.trace}

    def graph_snapshot_document(self) -> dict:
        with self._graph_lock:
            return self.engine.graph.to_document()

    def metrics_document(self) -> dict:
        rows = list(self.rows)
        out = {"episodes": len(rows), "sr": 0.0, "spl": 0.0, "cc": 0.0,
               "tl": 0.0}
        if rows:
            m = compute_metrics(rows)
            out.update({"sr": m.sr, "spl": m.spl, "cc": m.cc, "tl": m.tl})
        out["schedule"] = self.cfg.loop_schedule()
        out["latency"] = self.engine.latency_summary()
        return out

    def spawn_agent(self, payload: dict) -> int:
        script = _script_from_payload(payload, self.engine.world.t)
        reply = queue.Queue(1)
        self._commands.put(("spawn", script, reply))
        return reply.get(timeout=2.0)

    def pause_agent(self, tid: int, paused: bool) -> bool:
        reply = queue.Queue(1)
        self._commands.put(("pause", int(tid), bool(paused), reply))
        return reply.get(timeout=2.0)

    def subscribe(self) -> queue.Queue:
        q = queue.Queue(maxsize=_EVENT_QUEUE_SIZE)
        with self._sub_lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q) -> None:
        with self._sub_lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def _publish(self, event: dict) -> None:
        with self._sub_lock:
            for q in self._subscribers:
                try:
                    q.put_nowait(event)
                except queue.Full:
                    pass   # slow consumer loses events, loops never wait

    # -- sim thread ------------------------------------------------------------

    def _sim_loop(self):
        period = 1.0 / self.cfg.base_rate_hz
        next_t = time.monotonic()
        while not self._stop.is_set():
            self._drain_commands()
            self.engine.tick()
            if self.engine.world.step_count % self._local_every == 0:
                self.state_frame = self.engine.world_state()
                self._check_active_task()
            next_t += period
            now = time.monotonic()
            if now - next_t > 0.25:
                next_t = now   # fell far behind; slow down, never burst
            else:
                time.sleep(max(0.0, next_t - now))

    def _drain_commands(self):
        while True:
            try:
                cmd = self._commands.get_nowait()
            except queue.Empty:
                return
            kind = cmd[0]
            if kind == "route":
                _, task, route, node = cmd
                with self._tasks_lock:
                    if task.status in _TERMINAL:
                        continue   # superseded while planning
                    self.engine.set_route(route)
                    self.engine.goal_node = node
                    task.route = route.points
                    task.transition(EXECUTING, self.engine.world.t)
                    self._baseline = (self.engine.traveled,
                                      self.engine.collisions,
                                      self.engine.world.t)
                    gx, gy = task.goal_position
                    sx, sy = task.start[0], task.start[1]
                    shortest = max(math.hypot(gx - sx, gy - sy), 1e-9)
                    v_max = max(self.engine.scenario.v_limits[1], 0.1)
                    self._deadline = self.engine.world.t + max(
                        self.cfg.min_timeout_s,
                        self.cfg.timeout_factor * shortest / v_max)
                self._publish({"type": "task", "task": task.to_document()})
            elif kind == "spawn":
                _, script, reply = cmd
                reply.put(self.engine.spawn_agent(script))
                self._publish({"type": "what_if", "event": self.engine.events[-1]})
            elif kind == "pause":
                _, tid, paused, reply = cmd
                ok = self.engine.pause_agent(tid, paused)
                reply.put(ok)
                if ok:
                    self._publish({"type": "what_if",
                                   "event": self.engine.events[-1]})

    def _check_active_task(self):
        with self._tasks_lock:
            task = self.tasks.get(self._active_id)
            if task is None or task.status != EXECUTING:
                return
            pose = self.engine.world.ego.pose
            gx, gy = task.goal_position
            done = math.hypot(pose.x - gx, pose.y - gy) \
                <= self.cfg.success_radius_m
            timed_out = self._deadline is not None \
                and self.engine.world.t > self._deadline
            if not done and not timed_out:
                return
            if done:
                task.transition(SUCCEEDED, self.engine.world.t)
            else:
                task.transition(FAILED, self.engine.world.t, "timeout")
            self.engine.set_route(None)
            self.engine.command = (0.0, 0.0)
            row = self._finish_row(task, done)
            self.rows.append(row)
        self._publish({"type": "task", "task": task.to_document()})
        self._log_episode(task, row)

    def _finish_row(self, task, success: bool) -> EpisodeRow:
        traveled0, collisions0, t0 = self._baseline
        gx, gy = task.goal_position
        sx, sy = task.start[0], task.start[1]
        return EpisodeRow(
            task=f"task-{task.id}", trial=0, seed=self.engine.scenario.seed,
            updates=self.cfg.graph_updates, success=success,
            shortest_m=max(math.hypot(gx - sx, gy - sy), 1e-9),
            traveled_m=round(self.engine.traveled - traveled0, 6),
            collisions=self.engine.collisions - collisions0,
            sim_time_s=round(self.engine.world.t - t0, 6),
            status=task.status, reason=task.reason)

    def _log_episode(self, task, row) -> None:
        if not self.episode_log_path:
            return
        record = {"task": task.to_document(), "seed": self.engine.scenario.seed,
                  "scenario": self.engine.scenario.name,
                  "row": {"success": row.success, "traveled_m": row.traveled_m,
                          "collisions": row.collisions,
                          "sim_time_s": row.sim_time_s}}
        with open(self.episode_log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    # -- graph thread ----------------------------------------------------------

    def _graph_loop(self):
        engine = self.engine
        while not self._stop.is_set():
            try:
                item = engine.graph_work.get(timeout=0.2)
            except queue.Empty:
                continue
            cycle = item if item[0] == "cycle" else None
            prunes = [item] if item[0] == "prune" else []
            while True:   # collapse any backlog; only the newest cycle matters
                try:
                    nxt = engine.graph_work.get_nowait()
                except queue.Empty:
                    break
                if nxt[0] == "cycle":
                    cycle = nxt
                else:
                    prunes.append(nxt)
            before = engine.graph.revision
            with self._graph_lock:
                for _, removals in prunes:
                    engine.graph.remove_corridors(removals)
                if cycle is not None:
                    g0 = time.perf_counter()
                    _, views, ego, t = cycle
                    engine.graph.apply_tracks(views, ego, t)
                    engine.latency["graph"].append(time.perf_counter() - g0)
                engine.objects_view = dict(engine.graph.objects)
            after = engine.graph.revision
            if after != before:
                self._publish({"type": "graph_revision", "revision": after})

    # -- task thread -------------------------------------------------------------

    def _task_loop(self):
        while True:
            task = self._instructions.get()
            if task is None:
                return
            sx, sy = task.start[0], task.start[1]
            try:
                with self._graph_lock:
                    clone = self.engine.graph.snapshot()
                node, trace = retrieve(Query(task.instruction, (sx, sy, 0.0)),
                                       clone, self.cfg.retrieval)
            except ValueError as exc:
                self._fail_task(task, f"retrieval: {exc}")
                continue
            with self._tasks_lock:
                if task.status in _TERMINAL:
                    continue
                task.trace = trace.to_document()
                task.goal_node_id = node.id
                task.goal_position = (node.position[0], node.position[1])
                task.transition(PLANNING, self.engine.world.t)
            self._publish({"type": "task", "task": task.to_document()})
            try:
                route = global_plan((sx, sy, 0.0), node, clone,
                                    self.engine.roads)
            except ValueError as exc:
                self._fail_task(task, f"global plan: {exc}")
                continue
            self._commands.put(("route", task, route, node))

    def _fail_task(self, task, reason: str) -> None:
        with self._tasks_lock:
            if task.status in _TERMINAL:
                return
            task.transition(FAILED, self.engine.world.t, reason)
        self._publish({"type": "task", "task": task.to_document()})

    # -- autosave -----------------------------------------------------------------

    def _autosave_loop(self):
        while not self._stop.wait(self.autosave_interval_s):
            self._save_snapshot()

    def _save_snapshot(self):
        with self._graph_lock:
            doc = self.engine.graph.to_document()
        tmp = f"{self.autosave_path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
        os.replace(tmp, self.autosave_path)
