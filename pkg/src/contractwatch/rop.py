"""Rights, obligations and prohibitions held by one contracting party.

Every value here is immutable; operations return a new ``RopSet`` and never
touch their input, which is what lets the engine apply a rule's actions
atomically (build the new state, swap it in only if nothing failed).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

PENDING = "pending"
FULFILLED = "fulfilled"
VIOLATED = "violated"


class RopError(Exception):
    """Base class for deontic-state errors raised by rule actions."""


class NoSuchRight(RopError):
    pass


class DuplicateObligation(RopError):
    pass


class ConflictingDeonticState(RopError):
    pass


@dataclass(frozen=True)
class Party:
    id: str
    role: str

    def __post_init__(self):
        if not self.id:
            raise ValueError("party id must be non-empty")


@dataclass(frozen=True)
class BusinessOperation:
    name: str
    payload_schema: Optional[str] = None

    def __post_init__(self):
        if not self.name:
            raise ValueError("operation name must be non-empty")


@dataclass(frozen=True)
class Right:
    holder: str
    operations: frozenset
    counterparty: str
    expiry: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "operations", frozenset(self.operations))
        if not self.operations:
            raise ValueError("a right must cover at least one operation")
        if self.holder == self.counterparty:
            raise ValueError("right holder and counterparty must differ")

    def active(self, now: Optional[int] = None) -> bool:
        return self.expiry is None or now is None or now <= self.expiry


@dataclass(frozen=True)
class Obligation:
    name: str
    obligor: str
    alternatives: frozenset
    counterparty: str
    deadline: int
    created_at: int
    status: str = PENDING

    def __post_init__(self):
        object.__setattr__(self, "alternatives", frozenset(self.alternatives))
        if not self.alternatives:
            raise ValueError("an obligation needs at least one alternative")
        if self.deadline <= 0:
            raise ValueError("obligation deadline must be positive")
        if self.status not in (PENDING, FULFILLED, VIOLATED):
            raise ValueError(f"bad obligation status {self.status!r}")

    @property
    def due_at(self) -> int:
        return self.created_at + self.deadline

    @property
    def pending(self) -> bool:
        return self.status == PENDING


@dataclass(frozen=True)
class Prohibition:
    party: str
    operations: frozenset

    def __post_init__(self):
        object.__setattr__(self, "operations", frozenset(self.operations))
        if not self.operations:
            raise ValueError("a prohibition must cover at least one operation")


@dataclass(frozen=True)
class RopSet:
    party: str
    rights: frozenset = field(default_factory=frozenset)
    obligations: tuple = ()
    prohibitions: frozenset = field(default_factory=frozenset)

    def pending(self) -> list[Obligation]:
        return [o for o in self.obligations if o.pending]


def matches_rights(rop: RopSet, op: str, now: Optional[int] = None) -> bool:
    return any(op in r.operations and r.active(now) for r in rop.rights)


def is_prohibited(rop: RopSet, op: str) -> bool:
    return any(op in p.operations for p in rop.prohibitions)


def has_pending_obligation(rop: RopSet, name: str) -> bool:
    return any(o.pending and o.name == name for o in rop.obligations)


def remove_right(rop: RopSet, op: str, counterparty: str) -> RopSet:
    """Strip ``op`` from every right held against ``counterparty``.

    A right whose operation set becomes empty is dropped entirely.
    """
    kept, hit = set(), False
    for r in rop.rights:
        if op in r.operations and r.counterparty == counterparty:
            hit = True
            rest = r.operations - {op}
            if rest:
                kept.add(replace(r, operations=rest))
        else:
            kept.add(r)
    if not hit:
        raise NoSuchRight(f"{rop.party} holds no right to {op} against {counterparty}")
    return replace(rop, rights=frozenset(kept))


def add_right(rop: RopSet, right: Right) -> RopSet:
    if right.holder != rop.party:
        raise ValueError(f"right held by {right.holder} added to rop set of {rop.party}")
    clash = right.operations & _prohibited_ops(rop)
    if clash:
        raise ConflictingDeonticState(
            f"{rop.party}: {sorted(clash)} would be both permitted and prohibited")
    return replace(rop, rights=rop.rights | {right})


def add_prohibition(rop: RopSet, prohibition: Prohibition) -> RopSet:
    if prohibition.party != rop.party:
        raise ValueError(f"prohibition on {prohibition.party} added to rop set of {rop.party}")
    clash = prohibition.operations & _permitted_ops(rop)
    if clash:
        raise ConflictingDeonticState(
            f"{rop.party}: {sorted(clash)} would be both permitted and prohibited")
    return replace(rop, prohibitions=rop.prohibitions | {prohibition})


def add_obligation(rop: RopSet, name: str, alternatives: Iterable[str],
                   counterparty: str, deadline: int, now: int) -> RopSet:
    alternatives = frozenset(alternatives)
    if not alternatives:
        raise ValueError("alternatives must be non-empty")
    if deadline <= 0:
        raise ValueError("deadline must be positive")
    if has_pending_obligation(rop, name):
        raise DuplicateObligation(f"{rop.party} already has pending obligation {name!r}")
    ob = Obligation(name, rop.party, alternatives, counterparty, deadline, now)
    return replace(rop, obligations=rop.obligations + (ob,))


def fulfill_obligation(rop: RopSet, op: str, now: int) -> tuple[RopSet, list[str]]:
    """Discharge every in-time pending obligation that ``op`` satisfies.

    The deadline is inclusive: executing at exactly ``due_at`` still counts.
    Late executions leave the obligation pending for the next sweep.
    """
    done = []
    obligations = []
    for o in rop.obligations:
        if o.pending and op in o.alternatives and now <= o.due_at:
            o = replace(o, status=FULFILLED)
            done.append(o.name)
        obligations.append(o)
    if not done:
        return rop, []
    return replace(rop, obligations=tuple(obligations)), done


def expired_obligations(rop: RopSet, now: int) -> tuple[RopSet, list[Obligation]]:
    """Mark pending obligations whose deadline passed before ``now`` as violated.

    Returns the updated set and the newly violated obligations. Violated
    obligations stay in the set so the history keeps them.
    """
    violated = []
    obligations = []
    for o in rop.obligations:
        if o.pending and o.due_at < now:
            o = replace(o, status=VIOLATED)
            violated.append(o)
        obligations.append(o)
    if not violated:
        return rop, []
    return replace(rop, obligations=tuple(obligations)), violated


def _permitted_ops(rop: RopSet) -> frozenset:
    return frozenset().union(*(r.operations for r in rop.rights))


def _prohibited_ops(rop: RopSet) -> frozenset:
    return frozenset().union(*(p.operations for p in rop.prohibitions))


def check_invariants(rop: RopSet) -> None:
    """Raise AssertionError if ``rop`` breaks a structural invariant."""
    clash = _permitted_ops(rop) & _prohibited_ops(rop)
    assert not clash, f"ops both permitted and prohibited: {sorted(clash)}"
    names = [o.name for o in rop.obligations if o.pending]
    assert len(names) == len(set(names)), f"duplicate pending obligations: {names}"
    for r in rop.rights:
        assert r.holder == rop.party
    for o in rop.obligations:
        assert o.obligor == rop.party
