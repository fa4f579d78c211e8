"""HTTP front end for the engine and the audit ledger.

Events for one instance go through that instance's single-worker queue, so
they are processed in arrival order while different instances run in
parallel. Each event request waits for its verdict and returns it.

Events and verdicts are XML or JSON records, chosen by ``Content-Type`` on the
way in and by ``Accept`` on the way out (defaulting to the request's format).
Add ``?form=full`` to get the full XML verdict instead of the minimal one.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from . import engine as en
from . import ledger as lg
from . import wire
from .dsl import ParseError, parse, validate

log = logging.getLogger(__name__)


@dataclass
class GatewayConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    ledger_path: Optional[str] = None
    wall_clock: bool = False
    tick_ms: int = 1000
    contracts: list = field(default_factory=list)  # rule files deployed at start-up

    @classmethod
    def from_file(cls, path: Optional[str], **overrides) -> "GatewayConfig":
        data = {}
        if path:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        names = {f.name for f in fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)


def _error(status: int, kind: str, message: str, **extra) -> JSONResponse:
    return JSONResponse({"error": kind, "message": message, **extra}, status_code=status)


_STATUS = [
    (en.UnknownInstance, 404, "unknown-instance"),
    (en.UnknownContract, 404, "unknown-contract"),
    (lg.UnknownSubject, 404, "unknown-subject"),
    (en.TerminatedInstance, 409, "terminated"),
    (en.AlreadyTerminated, 409, "terminated"),
    (lg.SubjectKeyDestroyed, 409, "subject-erased"),
    (lg.AlreadyErased, 409, "subject-erased"),
    (en.ClockRegression, 409, "clock-regression"),
    (en.DuplicateContract, 409, "duplicate-contract"),
    (en.IncompleteBindings, 422, "incomplete-bindings"),
    (en.InvalidEvent, 400, "invalid-event"),
    (wire.WireError, 400, "malformed-body"),
]


def _map_error(exc: Exception) -> Optional[JSONResponse]:
    for cls, status, kind in _STATUS:
        if isinstance(exc, cls):
            extra = {"field": exc.field} if isinstance(exc, wire.WireError) else {}
            return _error(status, kind, str(exc) or kind, **extra)
    return None


class Gateway:
    """Shared state behind the HTTP app."""

    def __init__(self, config: GatewayConfig, manager: Optional[en.InstanceManager] = None):
        self.config = config
        if manager is None:
            ledger = lg.Ledger(config.ledger_path) if config.ledger_path else lg.Ledger()
            manager = en.InstanceManager(ledger)
        self.manager = manager
        self.ledger = manager.ledger
        self._queues: dict[str, ThreadPoolExecutor] = {}
        self._qlock = threading.Lock()
        self._stop = threading.Event()
        self._ticker: Optional[threading.Thread] = None
        self._t0 = time.monotonic()
        for path in config.contracts:
            with open(path, encoding="utf-8") as fh:
                self.deploy(fh.read())

    def now(self) -> int:
        """Milliseconds since the gateway started (wall-clock mode only)."""
        return int((time.monotonic() - self._t0) * 1000)

    def deploy(self, source: str) -> str:
        rs = parse(source)
        diags = validate(rs)
        if diags:
            raise ValueError("; ".join(f"{d.code}: {d.message}" for d in diags))
        return self.manager.load(rs)

    def queue(self, instance_id: str) -> ThreadPoolExecutor:
        with self._qlock:
            q = self._queues.get(instance_id)
            if q is None:
                q = self._queues[instance_id] = ThreadPoolExecutor(
                    max_workers=1, thread_name_prefix=f"q-{instance_id}")
            return q

    def start(self):
        if self.config.wall_clock and self._ticker is None:
            self._ticker = threading.Thread(target=self._tick, name="clock-ticker", daemon=True)
            self._ticker.start()

    def _tick(self):
        while not self._stop.wait(self.config.tick_ms / 1000):
            now = self.now()
            for iid in self.manager.instance_ids():
                fut = self.queue(iid).submit(self.manager.advance_clock, iid, now)
                try:
                    fut.result()
                except (en.TerminatedInstance, en.ClockRegression):
                    pass
                except Exception:
                    log.exception("clock advance failed for %s", iid)

    def shutdown(self):
        self._stop.set()
        if self._ticker is not None:
            self._ticker.join()
        with self._qlock:
            for q in self._queues.values():
                q.shutdown(wait=True)
            self._queues.clear()
        self.ledger.close()


def _wants_xml(request: Request, body_was_xml: bool) -> bool:
    accept = request.headers.get("accept", "")
    if "json" in accept and "xml" not in accept:
        return False
    if "xml" in accept:
        return True
    return body_was_xml


def create_app(config: Optional[GatewayConfig] = None,
               manager: Optional[en.InstanceManager] = None) -> FastAPI:
    gw = Gateway(config or GatewayConfig(), manager)

    @asynccontextmanager
    async def lifespan(app):
        gw.start()
        try:
            yield
        finally:
            gw.shutdown()

    app = FastAPI(title="contractwatch", lifespan=lifespan)
    app.state.gateway = gw

    async def run_queued(instance_id: str, fn, *args):
        gw.manager.query_state(instance_id)  # 404 before queueing
        fut = gw.queue(instance_id).submit(fn, *args)
        return await asyncio.wrap_future(fut)

    async def json_body(request: Request) -> dict:
        raw = await request.body()
        if not raw.strip():
            return {}
        try:
            data = json.loads(raw)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise wire.WireError(f"not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise wire.WireError("expected a JSON object")
        return data

    def int_field(data: dict, name: str, default=None) -> Optional[int]:
        v = data.get(name, default)
        if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
            raise wire.WireError(f"{name} must be an integer", name)
        return v

    async def handle(request: Request, exc: Exception):
        return _map_error(exc)

    for cls in dict.fromkeys(c for c, _, _ in _STATUS):
        app.add_exception_handler(cls, handle)

    @app.post("/contracts", status_code=201)
    async def post_contract(request: Request):
        source = (await request.body()).decode("utf-8", errors="replace")
        try:
            rs = parse(source)
        except ParseError as exc:
            return _error(422, "parse-error", exc.message, line=exc.line, column=exc.column)
        diags = validate(rs)
        if diags:
            return _error(422, "diagnostics", f"{len(diags)} diagnostics",
                          diagnostics=[asdict(d) for d in diags])
        name = gw.manager.load(rs)
        return JSONResponse({"contract": name}, status_code=201)

    @app.post("/instances", status_code=201)
    async def post_instance(request: Request):
        data = await json_body(request)
        contract, bindings = data.get("contract"), data.get("bindings")
        if not isinstance(contract, str) or not isinstance(bindings, dict):
            raise wire.WireError("need contract (string) and bindings (object)")
        now = gw.now() if gw.config.wall_clock else int_field(data, "now", 0)
        iid = gw.manager.create_instance(contract, bindings, now)
        return JSONResponse({"instance_id": iid}, status_code=201)

    @app.post("/instances/{instance_id}/events")
    async def post_event(instance_id: str, request: Request):
        snap = gw.manager.query_state(instance_id)
        raw = await request.body()
        ctype = request.headers.get("content-type")
        body_xml = wire.is_xml(ctype) or (not ctype and raw.lstrip()[:1] == b"<")
        wev = wire.decode_event(raw, ctype)
        if gw.config.wall_clock:
            event = replace(wev.to_event(instance_id), timestamp=gw.now())
        else:
            event = wev.to_event(instance_id, default_time=snap.clock)
        verdict = await run_queued(instance_id, gw.manager.submit_event, event)
        if _wants_xml(request, body_xml):
            full = request.query_params.get("form") == "full"
            return Response(wire.encode_verdict_xml(verdict, full=full),
                            media_type="application/xml")
        return Response(wire.encode_verdict_json(verdict), media_type="application/json")

    @app.get("/instances/{instance_id}/state")
    async def get_state(instance_id: str):
        return wire.snapshot_record(gw.manager.query_state(instance_id))

    @app.post("/instances/{instance_id}/clock")
    async def post_clock(instance_id: str, request: Request):
        data = await json_body(request)
        now = gw.now() if gw.config.wall_clock else int_field(data, "now")
        if now is None:
            raise wire.WireError("need now (integer ms)", "now")
        violations = await run_queued(instance_id, gw.manager.advance_clock, instance_id, now)
        return {"violations": [wire.violation_record(v) for v in violations]}

    @app.get("/instances/{instance_id}/verdicts")
    async def get_verdicts(instance_id: str, since: int = 0):
        return {"verdicts": [wire.verdict_to_record(v)
                             for v in gw.manager.verdicts(instance_id, since)]}

    @app.post("/instances/{instance_id}/terminate")
    async def post_terminate(instance_id: str, request: Request):
        data = await json_body(request)
        snap = gw.manager.query_state(instance_id)
        now = gw.now() if gw.config.wall_clock else int_field(data, "now", snap.clock)
        reason = data.get("reason", "")
        snap = await run_queued(instance_id, gw.manager.terminate_instance, instance_id, now,
                                str(reason))
        return wire.snapshot_record(snap)

    @app.get("/audit/verify")
    async def get_verify():
        return asdict(gw.ledger.verify_chain())

    @app.post("/subjects/{subject_id}/erase")
    async def post_erase(subject_id: str, request: Request):
        data = await json_body(request)
        now = gw.now() if gw.config.wall_clock else int_field(data, "now", 0)
        receipt = gw.ledger.erase_subject(subject_id, now)
        return asdict(receipt)

    return app


def serve(config: GatewayConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
