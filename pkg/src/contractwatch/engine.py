"""On-TTP contract compliance engine.

The engine monitors: for every contractual operation reported as an event
it produces a verdict and updates the parties' rights, obligations and
prohibitions. Blocking the business effect of a non-compliant operation is
left to whoever consumes the verdict.

Rule selection is first-match in declaration order on the event pattern;
the selected rule's guard then picks its ``then`` or ``else`` branch.
Deadlines are swept at each event's timestamp before rule evaluation, and
each violated obligation is offered to a ``__timeout__:<name>`` rule if the
contract defines one.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

from . import ledger as lg
from . import rop
from .dsl.printer import format_action
from .dsl.syntax import (INIT_EVENT, WILDCARD, AddObligation, AddProhibition, AddRight, And,
                         Not, Or, Pending, Prohibited, RemoveRight, Rights, Rule, RuleSet,
                         SetCompliance, SetState, StateIs, is_reserved_type, timeout_type)

log = logging.getLogger(__name__)

ACTIVE, TERMINATED = "active", "terminated"
SUCCESS, FAILURE = "success", "failure"


class EngineError(Exception):
    pass


class UnknownContract(EngineError):
    pass


class DuplicateContract(EngineError):
    pass


class UnknownInstance(EngineError):
    pass


class IncompleteBindings(EngineError):
    pass


class TerminatedInstance(EngineError):
    pass


class AlreadyTerminated(EngineError):
    pass


class ClockRegression(EngineError):
    pass


class InvalidEvent(EngineError):
    pass


@dataclass(frozen=True)
class Event:
    instance_id: str
    type: str
    originator: str
    responder: str
    status: str = SUCCESS
    timestamp: int = 0
    payload: Optional[bytes] = None
    personal: dict = field(default_factory=dict)
    subject: Optional[str] = None
    seq: Optional[int] = None


@dataclass(frozen=True)
class Verdict:
    instance_id: str
    seq: int
    compliant: bool
    triggered_rule: Optional[str]
    applied_actions: tuple
    resulting_state: str
    violations: tuple = ()
    discharged: tuple = ()
    engine_error: Optional[str] = None
    event_type: str = ""
    timestamp: int = 0


@dataclass(frozen=True)
class ViolationRecord:
    instance_id: str
    seq: int
    obligation: str
    obligor: str
    due_at: int
    detected_at: int
    triggered_rule: Optional[str] = None
    applied_actions: tuple = ()
    resulting_state: str = ""
    engine_error: Optional[str] = None


@dataclass(frozen=True)
class HistoryEntry:
    seq: int
    kind: str  # event | violation | termination
    timestamp: int
    event: Optional[Event] = None
    verdict: Optional[Verdict] = None
    violation: Optional[ViolationRecord] = None
    reason: Optional[str] = None


@dataclass(frozen=True)
class PendingObligation:
    role: str
    name: str
    due_at: int
    remaining_ms: int


@dataclass(frozen=True)
class Snapshot:
    instance_id: str
    contract: str
    state: str
    rops: dict
    pending: tuple
    lifecycle: str
    clock: int
    history_length: int


@dataclass
class ContractInstance:
    id: str
    ruleset: RuleSet
    bindings: dict
    state: str
    rops: dict
    clock: int
    history: list = field(default_factory=list)
    lifecycle: str = ACTIVE
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False, compare=False)

    def role_of(self, who: str) -> Optional[str]:
        for role, party in self.bindings.items():
            if party == who:
                return role
        # the role label itself is accepted as an alias for its bound party
        return who if who in self.bindings else None

    def snapshot(self) -> Snapshot:
        pending = []
        for role in self.ruleset.roles:
            for o in self.rops[role].pending():
                pending.append(PendingObligation(role, o.name, o.due_at, o.due_at - self.clock))
        return Snapshot(self.id, self.ruleset.contract, self.state, dict(self.rops),
                        tuple(pending), self.lifecycle, self.clock, len(self.history))


class _Draft:
    """Mutable scratch copy of an instance's deontic state."""

    def __init__(self, inst: ContractInstance):
        self.inst = inst
        self.state = inst.state
        self.rops = dict(inst.rops)

    def fork(self) -> "_Draft":
        d = _Draft.__new__(_Draft)
        d.inst, d.state, d.rops = self.inst, self.state, dict(self.rops)
        return d

    def party(self, role: str) -> str:
        return self.inst.bindings[role]

    def holds(self, g, now: int) -> bool:
        if g is None:
            return True
        if isinstance(g, Rights):
            return rop.matches_rights(self.rops[g.role], g.op, now)
        if isinstance(g, Pending):
            return rop.has_pending_obligation(self.rops[g.role], g.name)
        if isinstance(g, Prohibited):
            return rop.is_prohibited(self.rops[g.role], g.op)
        if isinstance(g, StateIs):
            return self.state == g.state
        if isinstance(g, Not):
            return not self.holds(g.expr, now)
        if isinstance(g, And):
            return self.holds(g.left, now) and self.holds(g.right, now)
        if isinstance(g, Or):
            return self.holds(g.left, now) or self.holds(g.right, now)
        raise TypeError(f"not a guard: {g!r}")

    def apply(self, a, now: int) -> Optional[bool]:
        """Apply one action; returns the compliance value for SetCompliance."""
        if isinstance(a, RemoveRight):
            self.rops[a.role] = rop.remove_right(self.rops[a.role], a.op, self.party(a.counterparty))
        elif isinstance(a, AddRight):
            right = rop.Right(self.party(a.role), a.ops, self.party(a.counterparty))
            self.rops[a.role] = rop.add_right(self.rops[a.role], right)
        elif isinstance(a, AddObligation):
            self.rops[a.obligor] = rop.add_obligation(
                self.rops[a.obligor], a.name, a.ops, self.party(a.counterparty), a.deadline, now)
        elif isinstance(a, AddProhibition):
            self.rops[a.role] = rop.add_prohibition(
                self.rops[a.role], rop.Prohibition(self.party(a.role), a.ops))
        elif isinstance(a, SetState):
            self.state = a.state
        elif isinstance(a, SetCompliance):
            return a.value
        else:
            raise TypeError(f"not an action: {a!r}")
        return None


def _pattern_matches(rule: Rule, type_: str, orig: Optional[str], resp: Optional[str],
                     status: str) -> bool:
    p = rule.pattern
    return (p.type == type_
            and (p.originator == WILDCARD or p.originator == orig)
            and (p.responder == WILDCARD or p.responder == resp)
            and (p.status == WILDCARD or p.status == status))


def _select(rs: RuleSet, type_, orig, resp, status) -> Optional[Rule]:
    for rule in rs.rules:
        if _pattern_matches(rule, type_, orig, resp, status):
            return rule
    return None


def _fire(draft: _Draft, rule: Rule, now: int):
    """Run ``rule`` on a fork of ``draft``.

    Returns (resulting draft, compliant, rendered actions, error). On an action
    failure the original draft is returned untouched.
    """
    work = draft.fork()
    matched = work.holds(rule.guard, now)
    actions = rule.then if matched else rule.otherwise
    compliant = matched
    try:
        for a in actions:
            v = work.apply(a, now)
            if v is not None:
                compliant = v
    except rop.RopError as exc:
        log.warning("rule %r failed: %s", rule.name, exc)
        return draft, False, (), f"{type(exc).__name__}: {exc}", matched
    return work, compliant, tuple(format_action(a) for a in actions), None, matched


class InstanceManager:
    """Registry of loaded rule sets and live contract instances."""

    def __init__(self, ledger: Optional[lg.Ledger] = None):
        self.ledger = ledger if ledger is not None else lg.Ledger()
        self._contracts: dict[str, RuleSet] = {}
        self._instances: dict[str, ContractInstance] = {}
        self._counter = 0
        self._lock = threading.RLock()

    # contracts

    def load(self, ruleset: RuleSet) -> str:
        with self._lock:
            if ruleset.contract in self._contracts:
                raise DuplicateContract(ruleset.contract)
            self._contracts[ruleset.contract] = ruleset
            return ruleset.contract

    def contracts(self) -> list[str]:
        return list(self._contracts)

    def instance_ids(self) -> list[str]:
        return list(self._instances)

    def _get(self, instance_id: str) -> ContractInstance:
        try:
            return self._instances[instance_id]
        except KeyError:
            raise UnknownInstance(instance_id) from None

    # lifecycle

    def create_instance(self, contract: str, bindings: dict, now: int = 0) -> str:
        with self._lock:
            rs = self._contracts.get(contract)
            if rs is None:
                raise UnknownContract(contract)
            missing = [r for r in rs.roles if not bindings.get(r)]
            extra = [r for r in bindings if r not in rs.roles]
            if missing or extra:
                raise IncompleteBindings(f"missing roles {missing}, undeclared roles {extra}")
            if len(set(bindings.values())) != len(bindings):
                raise IncompleteBindings("each role needs a distinct party")
            self._counter += 1
            iid = f"{contract}-{self._counter}"
            bindings = {r: bindings[r] for r in rs.roles}
            inst = ContractInstance(iid, rs, bindings, rs.initial,
                                    {r: rop.RopSet(p) for r, p in bindings.items()}, now)
            for rule in rs.rules:
                if rule.pattern.type == INIT_EVENT:
                    draft, _, _, err, _ = _fire(_Draft(inst), rule, now)
                    if err:
                        raise EngineError(f"initialisation rule {rule.name!r} failed: {err}")
                    inst.state, inst.rops = draft.state, draft.rops
                    break
            for party in bindings.values():
                self.ledger.register_subject(party)
            self.ledger.append(lg.CREATION, {
                "instance": iid, "contract": contract, "bindings": dict(bindings),
                "state": inst.state}, timestamp=now)
            self._instances[iid] = inst
            log.info("created %s", iid)
            return iid

    def _check_active(self, inst: ContractInstance, now: int):
        if inst.lifecycle != ACTIVE:
            raise TerminatedInstance(inst.id)
        if now < inst.clock:
            raise ClockRegression(f"{inst.id}: {now} < clock {inst.clock}")

    def _sweep(self, inst: ContractInstance, draft: _Draft, now: int, next_seq: int):
        records = []
        for role in inst.ruleset.roles:
            draft.rops[role], violated = rop.expired_obligations(draft.rops[role], now)
            for ob in violated:
                cp_role = inst.role_of(ob.counterparty)
                rule = _select(inst.ruleset, timeout_type(ob.name), role, cp_role, FAILURE)
                fired, actions, err = None, (), None
                if rule is not None:
                    new, _, actions, err, _ = _fire(draft, rule, now)
                    draft.state, draft.rops = new.state, new.rops
                    fired = rule.name
                records.append(ViolationRecord(inst.id, next_seq + len(records), ob.name,
                                               ob.obligor, ob.due_at, now, fired, actions,
                                               draft.state, err))
        return records

    def _log_violations(self, records):
        for v in records:
            self.ledger.append(lg.VIOLATION, {
                "instance": v.instance_id, "seq": v.seq, "obligation": v.obligation,
                "obligor": v.obligor, "due_at": v.due_at, "rule": v.triggered_rule,
                "actions": list(v.applied_actions), "state": v.resulting_state,
                "error": v.engine_error}, timestamp=v.detected_at)

    def submit_event(self, event: Event) -> Verdict:
        inst = self._get(event.instance_id)
        with inst.lock:
            now = event.timestamp
            self._check_active(inst, now)
            if event.originator == event.responder:
                raise InvalidEvent("originator and responder must differ")
            if event.status not in (SUCCESS, FAILURE):
                raise InvalidEvent(f"bad status {event.status!r}")
            if not event.type or is_reserved_type(event.type):
                raise InvalidEvent(f"event type {event.type!r} is reserved")
            subject = event.subject or event.originator
            if event.personal and self.ledger.subject_status(subject) == lg.DESTROYED:
                raise lg.SubjectKeyDestroyed(f"subject {subject!r} has been erased")

            base = len(inst.history) + 1
            draft = _Draft(inst)
            violations = self._sweep(inst, draft, now, base)
            seq = base + len(violations)

            orig = inst.role_of(event.originator)
            resp = inst.role_of(event.responder)
            rule = _select(inst.ruleset, event.type, orig, resp, event.status)
            discharged, actions, err, compliant = (), (), None, False
            if rule is not None:
                draft, compliant, actions, err, _ = _fire(draft, rule, now)
                if compliant and err is None and orig is not None:
                    draft.rops[orig], done = rop.fulfill_obligation(draft.rops[orig], event.type, now)
                    discharged = tuple(done)

            event = replace(event, seq=seq)
            verdict = Verdict(inst.id, seq, compliant, rule.name if rule else None, actions,
                              draft.state, tuple(v.obligation for v in violations), discharged,
                              err, event.type, now)

            self._log_violations(violations)
            self.ledger.append(lg.EVENT, {
                "instance": inst.id, "seq": seq, "type": event.type,
                "originator": event.originator, "responder": event.responder,
                "status": event.status, "payload": event.payload},
                personal=event.personal, subject=subject, timestamp=now)
            self.ledger.append(lg.VERDICT, {
                "instance": inst.id, "seq": seq, "compliant": verdict.compliant,
                "rule": verdict.triggered_rule, "actions": list(actions),
                "state": verdict.resulting_state, "violations": list(verdict.violations),
                "discharged": list(discharged), "error": err}, timestamp=now)

            inst.state, inst.rops, inst.clock = draft.state, draft.rops, now
            for v in violations:
                inst.history.append(HistoryEntry(v.seq, "violation", now, violation=v))
            inst.history.append(HistoryEntry(seq, "event", now, event=event, verdict=verdict))
            return verdict

    def advance_clock(self, instance_id: str, now: int) -> list[ViolationRecord]:
        inst = self._get(instance_id)
        with inst.lock:
            self._check_active(inst, now)
            draft = _Draft(inst)
            violations = self._sweep(inst, draft, now, len(inst.history) + 1)
            self._log_violations(violations)
            inst.state, inst.rops, inst.clock = draft.state, draft.rops, now
            for v in violations:
                inst.history.append(HistoryEntry(v.seq, "violation", now, violation=v))
            return violations

    def query_state(self, instance_id: str) -> Snapshot:
        inst = self._get(instance_id)
        with inst.lock:
            return inst.snapshot()

    def history(self, instance_id: str) -> list[HistoryEntry]:
        inst = self._get(instance_id)
        with inst.lock:
            return list(inst.history)

    def verdicts(self, instance_id: str, since: int = 0) -> list[Verdict]:
        return [h.verdict for h in self.history(instance_id)
                if h.kind == "event" and h.seq > since]

    def terminate_instance(self, instance_id: str, now: int, reason: str = "") -> Snapshot:
        inst = self._get(instance_id)
        with inst.lock:
            if inst.lifecycle == TERMINATED:
                raise AlreadyTerminated(instance_id)
            if now < inst.clock:
                raise ClockRegression(f"{inst.id}: {now} < clock {inst.clock}")
            seq = len(inst.history) + 1
            self.ledger.append(lg.TERMINATION, {"instance": inst.id, "seq": seq, "reason": reason},
                               timestamp=now)
            inst.history.append(HistoryEntry(seq, "termination", now, reason=reason))
            inst.lifecycle = TERMINATED
            inst.clock = now
            return inst.snapshot()
