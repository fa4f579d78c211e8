"""Event and verdict encodings: XML and a JSON record alternative.

Event XML::

    <event>
     <originator>buyer</originator>
     <responder>seller</responder>
     <type>POREQ</type>
     <status>success</status>
     <timestamp>0</timestamp>                      optional
     <subject>alice</subject>                      optional
     <personal><field name="carReg">base64</field></personal>   optional
     <payload>base64</payload>                     optional
    </event>

Whitespace policy: whitespace between elements is insignificant and ignored
on decode; element text is taken verbatim. The encoder indents child
elements by one space and ends the document with a newline, so the minimal
verdict is exactly::

    <result>
     <contractcompliance>true</contractcompliance>
    </result>

The full verdict form adds further children after ``contractcompliance``.
"""

from __future__ import annotations

import base64
import binascii
import json
import re
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field
from typing import Optional

from .engine import Event, Snapshot, Verdict, ViolationRecord

XML_TYPES = ("application/xml", "text/xml")
JSON_TYPE = "application/json"
STATUSES = ("success", "failure")

_XML_INVALID = re.compile("[\x00-\x08\x0b\x0c\x0e-\x1f\ud800-\udfff\ufffe\uffff]")


class WireError(ValueError):
    """Malformed wire body. ``field`` names the offending element if known."""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field

    def to_dict(self) -> dict:
        return {"error": "malformed-body", "message": str(self), "field": self.field}


@dataclass(frozen=True)
class WireEvent:
    originator: str
    responder: str
    type: str
    status: str = "success"
    timestamp: Optional[int] = None
    subject: Optional[str] = None
    personal: dict = field(default_factory=dict)  # label -> bytes
    payload: Optional[bytes] = None

    def to_event(self, instance_id: str, default_time: int = 0) -> Event:
        ts = self.timestamp if self.timestamp is not None else default_time
        return Event(instance_id, self.type, self.originator, self.responder, self.status, ts,
                     self.payload, dict(self.personal), self.subject)

    @classmethod
    def from_event(cls, ev: Event) -> "WireEvent":
        return cls(ev.originator, ev.responder, ev.type, ev.status, ev.timestamp, ev.subject,
                   dict(ev.personal), ev.payload)


def _check(ev: WireEvent) -> WireEvent:
    for name in ("originator", "responder", "type"):
        if not getattr(ev, name):
            raise WireError(f"missing {name}", name)
    if ev.status not in STATUSES:
        raise WireError(f"status must be success or failure, got {ev.status!r}", "status")
    if ev.timestamp is not None and ev.timestamp < 0:
        raise WireError("timestamp must be non-negative", "timestamp")
    return ev


# XML


def _text(s: str) -> str:
    if _XML_INVALID.search(s):
        raise WireError(f"character not representable in XML: {s!r}")
    return (s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
            .replace("\r", "&#13;"))


def _attr(s: str) -> str:
    return _text(s).replace('"', "&quot;").replace("\n", "&#10;").replace("\t", "&#9;")


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def _unb64(s: str, what: str) -> bytes:
    try:
        return base64.b64decode(s.strip(), validate=True)
    except (binascii.Error, ValueError) as exc:
        raise WireError(f"{what}: invalid base64", what) from exc


def encode_event_xml(ev: WireEvent) -> bytes:
    _check(ev)
    lines = ["<event>"]
    for name in ("originator", "responder", "type", "status"):
        lines.append(f" <{name}>{_text(getattr(ev, name))}</{name}>")
    if ev.timestamp is not None:
        lines.append(f" <timestamp>{ev.timestamp}</timestamp>")
    if ev.subject is not None:
        lines.append(f" <subject>{_text(ev.subject)}</subject>")
    if ev.personal:
        lines.append(" <personal>")
        for label in sorted(ev.personal):
            lines.append(f'  <field name="{_attr(label)}">{_b64(ev.personal[label])}</field>')
        lines.append(" </personal>")
    if ev.payload is not None:
        lines.append(f" <payload>{_b64(ev.payload)}</payload>")
    lines.append("</event>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_xml(data: bytes, root_tag: str) -> ET.Element:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        raise WireError(f"not well-formed XML: {exc}") from exc
    if root.tag != root_tag:
        raise WireError(f"expected <{root_tag}>, got <{root.tag}>")
    if (root.text or "").strip():
        raise WireError(f"unexpected text in <{root_tag}>")
    return root


def decode_event_xml(data: bytes) -> WireEvent:
    root = _parse_xml(data, "event")
    vals: dict = {}
    personal: dict = {}
    for child in root:
        tag = child.tag
        if tag in vals or (tag == "personal" and personal):
            raise WireError(f"duplicate <{tag}>", tag)
        if tag in ("originator", "responder", "type", "status", "subject"):
            if len(child):
                raise WireError(f"<{tag}> must hold text only", tag)
            vals[tag] = child.text or ""
        elif tag == "timestamp":
            try:
                vals[tag] = int((child.text or "").strip())
            except ValueError:
                raise WireError("timestamp must be an integer", tag) from None
        elif tag == "payload":
            vals[tag] = _unb64(child.text or "", "payload")
        elif tag == "personal":
            for f in child:
                label = f.get("name")
                if f.tag != "field" or label is None:
                    raise WireError('personal data needs <field name="...">', "personal")
                if label in personal:
                    raise WireError(f"duplicate personal field {label!r}", "personal")
                personal[label] = _unb64(f.text or "", "personal")
        else:
            raise WireError(f"unknown element <{tag}>", tag)
    for name in ("originator", "responder", "type", "status"):
        if name not in vals:
            raise WireError(f"missing <{name}>", name)
    return _check(WireEvent(vals["originator"], vals["responder"], vals["type"],
                            vals["status"], vals.get("timestamp"), vals.get("subject"),
                            personal, vals.get("payload")))


def encode_verdict_xml(v: Verdict, full: bool = False) -> bytes:
    lines = ["<result>", f" <contractcompliance>{'true' if v.compliant else 'false'}"
                         "</contractcompliance>"]
    if full:
        lines.append(f" <instance>{_text(v.instance_id)}</instance>")
        lines.append(f" <seq>{v.seq}</seq>")
        lines.append(f" <type>{_text(v.event_type)}</type>")
        lines.append(f" <timestamp>{v.timestamp}</timestamp>")
        if v.triggered_rule is not None:
            lines.append(f" <rule>{_text(v.triggered_rule)}</rule>")
        lines.append(f" <state>{_text(v.resulting_state)}</state>")
        for tag, items in (("action", v.applied_actions), ("violation", v.violations),
                           ("discharged", v.discharged)):
            for it in items:
                lines.append(f" <{tag}>{_text(it)}</{tag}>")
        if v.engine_error is not None:
            lines.append(f" <error>{_text(v.engine_error)}</error>")
    lines.append("</result>")
    return ("\n".join(lines) + "\n").encode("utf-8")


def decode_verdict_xml(data: bytes) -> dict:
    """Decode either verdict form to a dict; only present fields are returned."""
    root = _parse_xml(data, "result")
    out: dict = {}
    lists = {"action": "applied_actions", "violation": "violations", "discharged": "discharged"}
    for child in root:
        text = child.text or ""
        if child.tag == "contractcompliance":
            if text.strip() not in ("true", "false"):
                raise WireError("contractcompliance must be true or false", child.tag)
            out["compliant"] = text.strip() == "true"
        elif child.tag in ("seq", "timestamp"):
            out[child.tag] = int(text)
        elif child.tag in lists:
            out.setdefault(lists[child.tag], []).append(text)
        elif child.tag in ("instance", "type", "rule", "state", "error"):
            key = {"instance": "instance_id", "type": "event_type", "rule": "triggered_rule",
                   "state": "resulting_state", "error": "engine_error"}[child.tag]
            out[key] = text
        else:
            raise WireError(f"unknown element <{child.tag}>", child.tag)
    if "compliant" not in out:
        raise WireError("missing <contractcompliance>", "contractcompliance")
    return out


# JSON records


def event_to_record(ev: WireEvent) -> dict:
    _check(ev)
    rec = {"originator": ev.originator, "responder": ev.responder, "type": ev.type,
           "status": ev.status}
    if ev.timestamp is not None:
        rec["timestamp"] = ev.timestamp
    if ev.subject is not None:
        rec["subject"] = ev.subject
    if ev.personal:
        rec["personal"] = {k: _b64(v) for k, v in sorted(ev.personal.items())}
    if ev.payload is not None:
        rec["payload"] = _b64(ev.payload)
    return rec


def event_from_record(rec) -> WireEvent:
    if not isinstance(rec, dict):
        raise WireError("event record must be an object")
    known = {"originator", "responder", "type", "status", "timestamp", "subject", "personal",
             "payload"}
    extra = set(rec) - known
    if extra:
        raise WireError(f"unknown fields {sorted(extra)}", sorted(extra)[0])
    for name in ("originator", "responder", "type", "subject"):
        if name in rec and not isinstance(rec[name], str):
            raise WireError(f"{name} must be a string", name)
    for name in ("originator", "responder", "type"):
        if name not in rec:
            raise WireError(f"missing {name}", name)
    ts = rec.get("timestamp")
    if ts is not None and (not isinstance(ts, int) or isinstance(ts, bool)):
        raise WireError("timestamp must be an integer", "timestamp")
    personal = rec.get("personal") or {}
    if not isinstance(personal, dict) or not all(isinstance(v, str) for v in personal.values()):
        raise WireError("personal must map labels to base64 strings", "personal")
    payload = rec.get("payload")
    if payload is not None and not isinstance(payload, str):
        raise WireError("payload must be a base64 string", "payload")
    return _check(WireEvent(
        rec["originator"], rec["responder"], rec["type"], rec.get("status", "success"), ts,
        rec.get("subject"), {k: _unb64(v, "personal") for k, v in personal.items()},
        _unb64(payload, "payload") if payload is not None else None))


def encode_event_json(ev: WireEvent) -> bytes:
    return json.dumps(event_to_record(ev), sort_keys=True).encode("utf-8")


def decode_event_json(data: bytes) -> WireEvent:
    try:
        rec = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise WireError(f"not valid JSON: {exc}") from exc
    return event_from_record(rec)


def verdict_to_record(v: Verdict) -> dict:
    return {"instance_id": v.instance_id, "seq": v.seq, "compliant": v.compliant,
            "event_type": v.event_type, "timestamp": v.timestamp,
            "triggered_rule": v.triggered_rule, "applied_actions": list(v.applied_actions),
            "resulting_state": v.resulting_state, "violations": list(v.violations),
            "discharged": list(v.discharged), "engine_error": v.engine_error}


def snapshot_record(s: Snapshot) -> dict:
    rops = {}
    for role, r in s.rops.items():
        rops[role] = {
            "party": r.party,
            "rights": sorted(({"operations": sorted(x.operations), "counterparty": x.counterparty,
                               "expiry": x.expiry} for x in r.rights),
                             key=lambda d: (d["operations"], d["counterparty"])),
            "obligations": [{"name": o.name, "alternatives": sorted(o.alternatives),
                             "counterparty": o.counterparty, "due_at": o.due_at,
                             "status": o.status} for o in r.obligations],
            "prohibitions": sorted(op for p in r.prohibitions for op in p.operations),
        }
    return {"instance_id": s.instance_id, "contract": s.contract, "state": s.state,
            "lifecycle": s.lifecycle, "clock": s.clock, "history_length": s.history_length,
            "pending": [asdict(p) for p in s.pending], "rops": rops}


def violation_record(v: ViolationRecord) -> dict:
    d = asdict(v)
    d["applied_actions"] = list(v.applied_actions)
    return d


def encode_verdict_json(v: Verdict) -> bytes:
    return json.dumps(verdict_to_record(v), sort_keys=True).encode("utf-8")


def is_xml(content_type: Optional[str]) -> bool:
    if not content_type:
        return False
    base = content_type.split(";")[0].strip().lower()
    return base in XML_TYPES or base.endswith("+xml")


def decode_event(data: bytes, content_type: Optional[str]) -> WireEvent:
    """Pick the decoder from the content type; a body starting with '<' is XML."""
    if is_xml(content_type) or (not content_type and data.lstrip()[:1] == b"<"):
        return decode_event_xml(data)
    return decode_event_json(data)
