"""HTTP and WebSocket surface over a running ServiceRuntime.

Handlers are readers plus command enqueuers; the runtime's timed loops
never wait on them. Every error body is machine-readable:
{"error": {"code": ..., "message": ...}}.
"""

import asyncio
import queue

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from semnav.formats import load_schema

SCHEMA_VERSION = 1
STREAM_PERIOD_S = 0.1   # state frames at most every period: <= 10 Hz


class InstructionBody(BaseModel):
    instruction: str = Field(min_length=1)


class WaypointBody(BaseModel):
    t: float = Field(ge=0.0)
    x: float
    y: float


class SpawnBody(BaseModel):
    label: str = "injected agent"
    waypoints: list[WaypointBody] = Field(min_length=1)
    box: dict = None
    loop: bool = False


class PauseBody(BaseModel):
    paused: bool


def _reject(code: str, message: str, status: int = 400) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": {"code": code, "message": message}})


def build_app(runtime) -> FastAPI:
    app = FastAPI(title="semnav service", version="1.0")

    @app.exception_handler(RequestValidationError)
    async def malformed(request: Request, exc: RequestValidationError):
        return _reject("malformed", str(exc.errors()[:3]), status=422)

    @app.post("/tasks", status_code=201)
    def submit_task(body: InstructionBody):
        tid = runtime.submit_instruction(body.instruction)
        return {"id": tid}

    @app.get("/tasks/{tid}")
    def task_status(tid: int):
        doc = runtime.task_document(tid)
        if doc is None:
            return _reject("unknown_task", f"no task {tid}", status=404)
        return doc

    @app.get("/tasks/{tid}/trace")
    def task_trace(tid: int):
        doc = runtime.task_trace(tid)
        if doc is None:
            return _reject("unknown_task", f"no task {tid}", status=404)
        return doc

    @app.get("/graph/snapshot")
    def graph_snapshot():
        doc = runtime.graph_snapshot_document()
        return {"revision": doc["revision"], "snapshot": doc}

    @app.get("/metrics")
    def metrics():
        return runtime.metrics_document()

    @app.get("/schema")
    def schema():
        return {"schema_version": SCHEMA_VERSION, "wire": load_schema("wire")}

    @app.post("/world/agents", status_code=201)
    def spawn_agent(body: SpawnBody):
        try:
            tid = runtime.spawn_agent(body.model_dump())
        except ValueError as exc:
            return _reject("bad_spawn", str(exc))
        return {"id": tid}

    @app.post("/world/agents/{tid}/pause")
    def pause_agent(tid: int, body: PauseBody):
        ok = runtime.pause_agent(tid, body.paused)
        if not ok:
            return _reject("unknown_agent", f"no scripted agent {tid}",
                           status=404)
        return {"id": tid, "paused": body.paused}

    @app.websocket("/ws/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        await ws.send_json({"type": "hello", "schema_version": SCHEMA_VERSION,
                            "scenario": runtime.engine.scenario.name})
        events = runtime.subscribe()
        listener = asyncio.create_task(_reject_inbound(ws))
        try:
            last_t = None
            while True:
                while True:
                    try:
                        await ws.send_json(events.get_nowait())
                    except queue.Empty:
                        break
                frame = runtime.state_frame
                if frame["t"] != last_t:
                    last_t = frame["t"]
                    await ws.send_json({"type": "state", "state": frame})
                await asyncio.sleep(STREAM_PERIOD_S)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            listener.cancel()
            runtime.unsubscribe(events)

    return app


async def _reject_inbound(ws: WebSocket):
    """The stream is one-way; every inbound frame gets a typed reject."""
    try:
        while True:
            await ws.receive_text()
            await ws.send_json({"type": "error",
                                "error": {"code": "not_a_command_channel",
                                          "message": "use the HTTP endpoints"}})
    except (WebSocketDisconnect, RuntimeError, asyncio.CancelledError):
        pass


def serve(runtime, host: str = "127.0.0.1", port: int = 8750):
    """Block serving the API until interrupted; stops the runtime after."""
    import uvicorn

    app = build_app(runtime)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        runtime.stop()
