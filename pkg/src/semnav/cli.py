"""Command-line entry points.

Exit codes are uniform across subcommands: 0 success, 1 task failure,
2 configuration error (bad paths, malformed documents, bad flags).
"""

import argparse
import json
import sys

from semnav.formats import MalformedDocument, read_json, write_json
from semnav.llm import MockLexicalProvider
from semnav.service.runtime import Engine, RuntimeConfig, TaskError, run_task
from semnav.service.suites import (
    evaluate_suite,
    load_scenario,
    load_scenario_doc,
    load_suite,
    summarize,
    write_outputs,
)
from semnav.world import Scenario

REPLAY_LOG_VERSION = 1


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semnav")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="drive one instruction to arrival")
    run.add_argument("scenario", help="bundled scenario name or JSON path")
    run.add_argument("instruction")
    run.add_argument("--seed", type=int, default=None,
                     help="override the scenario seed")
    run.add_argument("--log", default=None,
                     help="write a replayable episode log here")
    run.add_argument("--no-graph-updates", action="store_true")

    ev = sub.add_parser("eval", help="run an evaluation suite")
    ev.add_argument("suite", help="bundled suite name or JSON path")
    ev.add_argument("--updates", choices=("on", "off", "both"), default="on")
    ev.add_argument("--out", default="eval_out", help="report directory")

    srv = sub.add_parser("serve", help="host the HTTP/WebSocket service")
    srv.add_argument("scenario", help="bundled scenario name or JSON path")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8750)
    srv.add_argument("--seed", type=int, default=None)
    srv.add_argument("--autosave", default=None,
                     help="graph snapshot path, saved periodically and on exit")
    srv.add_argument("--autosave-interval", type=float, default=30.0)
    srv.add_argument("--episode-log", default=None,
                     help="append-only task record file")

    rp = sub.add_parser("replay", help="re-run a logged episode and compare")
    rp.add_argument("log", help="episode log written by `run --log`")
    return p


def _cmd_run(args) -> int:
    doc = load_scenario_doc(args.scenario)
    scenario = Scenario.from_dict(doc)
    cfg = RuntimeConfig(graph_updates=not args.no_graph_updates)
    engine = Engine(scenario, cfg, provider=MockLexicalProvider(),
                    seed=args.seed)
    code = 0
    try:
        task, row = run_task(args.instruction, engine)
    except TaskError as exc:
        task, row = exc.task, exc.row
        code = 1
    print(f"{task.status}: {task.reason or 'arrived'}  "
          f"traveled={row.traveled_m:.2f}m  collisions={row.collisions}  "
          f"sim_time={row.sim_time_s:.1f}s")
    if args.log:
        write_json(args.log, {
            "version": REPLAY_LOG_VERSION,
            "scenario": doc,
            "instruction": args.instruction,
            "seed": engine.scenario.seed,
            "graph_updates": cfg.graph_updates,
            "status": task.status,
            "trajectory": [list(p) for p in engine.trajectory_log],
        })
        print(f"episode log written to {args.log}")
    return code


def _cmd_eval(args) -> int:
    suite = load_suite(args.suite)
    arms = {"on": (True,), "off": (False,), "both": (True, False)}[args.updates]
    name = suite.get("name", "suite")
    for updates in arms:
        metrics, rows = evaluate_suite(suite, updates=updates)
        paths = write_outputs(args.out, name, updates, metrics, rows)
        s = summarize(name, updates, metrics, rows)
        print(f"updates={'on' if updates else 'off'}  "
              f"episodes={s['episodes']}  SR={s['sr']:.3f}  "
              f"SPL={s['spl']:.3f}  CC={s['cc']:.3f}  TL={s['tl']:.2f}")
        print(f"  csv: {paths['csv']}")
        print(f"  summary: {paths['summary']}")
    return 0


def _cmd_serve(args) -> int:
    from semnav.service.api import serve
    from semnav.service.threaded import ServiceRuntime

    scenario = load_scenario(args.scenario)
    runtime = ServiceRuntime(
        scenario, RuntimeConfig(), seed=args.seed,
        autosave_path=args.autosave,
        autosave_interval_s=args.autosave_interval,
        episode_log_path=args.episode_log).start()
    print(f"serving {scenario.name} on {args.host}:{args.port}")
    serve(runtime, host=args.host, port=args.port)
    return 0


def _cmd_replay(args) -> int:
    doc = read_json(args.log)
    if doc.get("version") != REPLAY_LOG_VERSION:
        raise MalformedDocument(
            f"{args.log}: unsupported log version {doc.get('version')!r}")
    for key in ("scenario", "instruction", "seed", "trajectory"):
        if key not in doc:
            raise MalformedDocument(f"{args.log}: missing {key!r}")
    scenario = Scenario.from_dict(doc["scenario"])
    cfg = RuntimeConfig(graph_updates=bool(doc.get("graph_updates", True)))
    engine = Engine(scenario, cfg, provider=MockLexicalProvider(),
                    seed=doc["seed"])
    try:
        run_task(doc["instruction"], engine)
    except TaskError:
        pass   # a logged failure replays to the same failure
    fresh = [list(p) for p in engine.trajectory_log]
    logged = doc["trajectory"]
    if fresh == logged:
        print(f"replay identical: {len(fresh)} trajectory samples match")
        return 0
    n = min(len(fresh), len(logged))
    first = next((i for i in range(n) if fresh[i] != logged[i]), n)
    print(f"replay DIVERGED at sample {first} "
          f"(logged {len(logged)}, replayed {len(fresh)})")
    return 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "eval": _cmd_eval,
                "serve": _cmd_serve, "replay": _cmd_replay}
    try:
        return handlers[args.command](args)
    except (MalformedDocument, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
