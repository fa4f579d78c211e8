"""Newline-delimited JSON traces of contract events.

Each line is one record::

    {"at": 0, "type": "POREQ", "originator": "alice", "responder": "bob", "status": "success"}
    {"at": 600001, "clock": true}

Event records may also carry ``personal`` (label -> string), ``subject``,
``payload`` (base64), and, for the chain simulator, ``loops``,
``gas_price`` and ``gas_limit``. An optional ``{"bindings": {...}}`` record
names the party bound to each role.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Optional, Union


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class TraceEvent:
    at: int
    type: str
    originator: str
    responder: str
    status: str = "success"
    personal: dict = field(default_factory=dict)
    subject: Optional[str] = None
    payload: Optional[bytes] = None
    loops: int = 0
    gas_price: int = 1
    gas_limit: Optional[int] = None


@dataclass(frozen=True)
class ClockAdvance:
    at: int


Record = Union[TraceEvent, ClockAdvance]


@dataclass
class Trace:
    records: list
    bindings: Optional[dict] = None
    name: str = ""

    @property
    def events(self) -> list[TraceEvent]:
        return [r for r in self.records if isinstance(r, TraceEvent)]


def _record(obj: dict, lineno: int) -> Record:
    try:
        at = int(obj["at"])
        if obj.get("clock"):
            return ClockAdvance(at)
        payload = obj.get("payload")
        return TraceEvent(
            at=at, type=obj["type"], originator=obj["originator"], responder=obj["responder"],
            status=obj.get("status", "success"),
            personal={k: v.encode("utf-8") for k, v in obj.get("personal", {}).items()},
            subject=obj.get("subject"),
            payload=base64.b64decode(payload) if payload else None,
            loops=int(obj.get("loops", 0)), gas_price=int(obj.get("gas_price", 1)),
            gas_limit=obj.get("gas_limit"))
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceError(f"line {lineno}: bad trace record ({exc})") from exc


def parse_trace(text: str, name: str = "") -> Trace:
    records, bindings = [], None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {lineno}: {exc}") from exc
        if not isinstance(obj, dict):
            raise TraceError(f"line {lineno}: expected an object")
        if "bindings" in obj:
            bindings = dict(obj["bindings"])
            continue
        records.append(_record(obj, lineno))
    return Trace(records, bindings, name)


def load_trace(path) -> Trace:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh.read(), name=str(path))


def dump_record(r: Record) -> dict:
    if isinstance(r, ClockAdvance):
        return {"at": r.at, "clock": True}
    out = {"at": r.at, "type": r.type, "originator": r.originator,
           "responder": r.responder, "status": r.status}
    if r.personal:
        out["personal"] = {k: v.decode("utf-8") for k, v in r.personal.items()}
    if r.subject:
        out["subject"] = r.subject
    if r.payload:
        out["payload"] = base64.b64encode(r.payload).decode("ascii")
    if r.loops:
        out["loops"] = r.loops
    if r.gas_price != 1:
        out["gas_price"] = r.gas_price
    if r.gas_limit is not None:
        out["gas_limit"] = r.gas_limit
    return out


def dump_trace(trace: Trace) -> str:
    lines = []
    if trace.bindings:
        lines.append(json.dumps({"bindings": trace.bindings}))
    lines += [json.dumps(dump_record(r)) for r in trace.records]
    return "\n".join(lines) + "\n"
