"""FastAPI application: REST runs of the case studies plus the live
teleoperation websocket.

The websocket side splits into a reader task (parses inbound messages,
answers malformed ones with error frames) and the control loop (applies
queued messages between ticks, solves, emits frames). Frames go through
a bounded drop-oldest queue so a slow client cannot stall the loop;
simulation time stays authoritative regardless of wall-clock overruns.
"""

from __future__ import annotations

import asyncio
import json
import math
from typing import Optional

import numpy as np
from fastapi import FastAPI, Query, WebSocket, WebSocketDisconnect

from ps2f import __version__, logio
from ps2f.cases import (
    CASE1_X0,
    case1_config,
    case3_config,
    run_baseline_case3,
    run_case1,
    run_case3,
)
from ps2f.linear import max_ellipsoid_level, solve_dare
from ps2f.service.schemas import (
    DareResponse,
    HealthResponse,
    RunCase1Request,
    RunCase3Request,
    RunSummary,
    SweepRequest,
    SweepResponse,
    SweepEntryModel,
)
from ps2f.service.teleop import TeleopSession
from ps2f.simulate import ClosedLoopAssertionError, parameter_sweep_s2
from ps2f.types import ModeSchedule

DEFAULT_SWEEPS = [
    ("a", [0.0, 0.5, 0.95]),
    ("M", [1, 2, 5]),
    ("N", [1, 2, 5]),
    ("Q", [0.1, 1.0, 10.0]),
]
_FRAME_QUEUE = 256


def _summary(case: str, log, ok: bool = True,
             failed: Optional[str] = None) -> RunSummary:
    s = logio.summarize(log)
    slack = s["max_decrease_slack"]
    return RunSummary(
        ok=ok, case=case, steps=s["steps"], violations=s["violations"],
        min_margin=s["min_margin"], fallback_steps=s["fallback_steps"],
        final_state=s.get("final_state"),
        final_state_norm=s.get("final_state_norm"),
        max_decrease_slack=(None if slack is None or not math.isfinite(slack)
                            else slack),
        failed_invariant=failed,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="ps2f service", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.get("/dare", response_model=DareResponse)
    def dare():
        cfg = case1_config()
        r = solve_dare(cfg.model.A, cfg.model.B, cfg.cost.Q, cfg.cost.R)
        gamma = max_ellipsoid_level(r.P, r.K, cfg.X, cfg.U)
        return DareResponse(P=r.P.tolist(), K=r.K.tolist(), gamma=gamma)

    @app.post("/run/case1", response_model=RunSummary)
    def case1(req: RunCase1Request):
        try:
            log = run_case1(steps=req.steps, assertions=req.assertions,
                            a=req.a, M=req.M)
        except ClosedLoopAssertionError as e:
            return _summary("case1", e.log, ok=False, failed=str(e))
        return _summary("case1", log)

    @app.post("/run/case2", response_model=SweepResponse)
    def case2(req: SweepRequest):
        sweeps = req.sweeps if req.sweeps is not None else DEFAULT_SWEEPS
        entries = parameter_sweep_s2(case1_config(), CASE1_X0, sweeps,
                                     grid_resolution=req.grid)
        return SweepResponse(grid=req.grid, entries=[
            SweepEntryModel(
                parameter=e.parameter, value=e.value, feasible=e.feasible,
                member_count=e.member_count,
                boundary=[[[float(a), float(b)] for a, b in line]
                          for line in e.boundary],
            ) for e in entries
        ])

    @app.post("/run/case3", response_model=RunSummary)
    def case3(req: RunCase3Request):
        name = f"case3-{req.variant}"
        if req.variant == "baseline":
            return _summary(name, run_baseline_case3(Ks=req.Ks,
                                                     steps=req.steps))
        try:
            log = run_case3(steps=req.steps, Ks=req.Ks,
                            assertions=req.assertions)
        except ClosedLoopAssertionError as e:
            return _summary(name, e.log, ok=False, failed=str(e))
        return _summary(name, log)

    @app.websocket("/ws/teleop")
    async def ws_teleop(
        ws: WebSocket,
        case: str = Query(default="case3"),
        tick: float = Query(default=0.2, ge=0.0),
        boundary_every: int = Query(default=10, ge=1),
        grid: int = Query(default=13, ge=0),
    ):
        await ws.accept()
        session = _make_session(case, boundary_every, grid)
        if session is None:
            await ws.send_text(json.dumps(
                {"type": "error", "message": f"unknown case: {case!r}"}))
            await ws.close()
            return
        out: asyncio.Queue = asyncio.Queue(maxsize=_FRAME_QUEUE)
        inbox: list = []
        stop = asyncio.Event()

        def push(obj: dict) -> None:
            if out.full():
                out.get_nowait()
            out.put_nowait(obj)

        async def reader():
            try:
                while True:
                    raw = await ws.receive_text()
                    try:
                        msg = json.loads(raw)
                        if not isinstance(msg, dict):
                            raise ValueError("message must be an object")
                    except ValueError as e:
                        push({"type": "error", "message": f"bad json: {e}"})
                        continue
                    inbox.append(msg)
            except WebSocketDisconnect:
                stop.set()

        async def sender():
            while not stop.is_set():
                obj = await out.get()
                try:
                    await ws.send_text(json.dumps(obj))
                except (WebSocketDisconnect, RuntimeError):
                    stop.set()

        reader_task = asyncio.create_task(reader())
        sender_task = asyncio.create_task(sender())
        push(session.config_frame())
        try:
            while not stop.is_set():
                await asyncio.sleep(tick)
                for msg in inbox:
                    err = session.apply_message(msg)
                    if err is not None:
                        push({"type": "error", "message": err})
                inbox.clear()
                frame = await asyncio.to_thread(session.tick)
                if frame is not None:
                    push(frame)
                elif not session.paused:
                    push({"type": "error",
                          "message": "nominal problem infeasible; session "
                                     "halted"})
                    break
        finally:
            stop.set()
            reader_task.cancel()
            sender_task.cancel()

    return app


def _make_session(case: str, boundary_every: int,
                  grid: int) -> Optional[TeleopSession]:
    # the unreachable second break declares the admissible set_a range
    # without ever firing on its own
    if case == "case1":
        cfg = case1_config()
        schedule = ModeSchedule(a_breaks=((0, 0.95), (10 ** 9, 2.0)),
                                M_breaks=((0, cfg.M),), Ks=0)
        session = TeleopSession(cfg, schedule, case,
                                boundary_every=boundary_every,
                                boundary_resolution=grid)
        session.x = np.array(CASE1_X0)
        return session
    if case == "case3":
        cfg = case3_config()
        schedule = ModeSchedule(a_breaks=((0, 100.0), (10 ** 9, 0.5)),
                                M_breaks=((0, cfg.M),), Ks=0)
        return TeleopSession(cfg, schedule, case,
                             boundary_every=boundary_every,
                             boundary_resolution=grid)
    return None
