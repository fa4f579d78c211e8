"""Abstract syntax of the contract rule language."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

WILDCARD = "*"
INIT_EVENT = "__init__"
TIMEOUT_PREFIX = "__timeout__:"

STATUSES = ("success", "failure", WILDCARD)


def is_reserved_type(name: str) -> bool:
    return name == INIT_EVENT or name.startswith(TIMEOUT_PREFIX)


def timeout_type(obligation: str) -> str:
    return TIMEOUT_PREFIX + obligation


@dataclass(frozen=True)
class EventPattern:
    type: str
    originator: str = WILDCARD
    responder: str = WILDCARD
    status: str = WILDCARD

    def covers(self, other: "EventPattern") -> bool:
        """True if every event matched by ``other`` is also matched by ``self``."""
        return self.type == other.type and all(
            mine == WILDCARD or mine == theirs
            for mine, theirs in ((self.originator, other.originator),
                                 (self.responder, other.responder),
                                 (self.status, other.status)))


# guard expressions

@dataclass(frozen=True)
class Rights:
    role: str
    op: str


@dataclass(frozen=True)
class Pending:
    role: str
    name: str


@dataclass(frozen=True)
class Prohibited:
    role: str
    op: str


@dataclass(frozen=True)
class StateIs:
    state: str


@dataclass(frozen=True)
class Not:
    expr: "Guard"


@dataclass(frozen=True)
class And:
    left: "Guard"
    right: "Guard"


@dataclass(frozen=True)
class Or:
    left: "Guard"
    right: "Guard"


Guard = Union[Rights, Pending, Prohibited, StateIs, Not, And, Or]


# actions

@dataclass(frozen=True)
class RemoveRight:
    role: str
    op: str
    counterparty: str


@dataclass(frozen=True)
class AddRight:
    role: str
    ops: frozenset
    counterparty: str


@dataclass(frozen=True)
class AddObligation:
    name: str
    ops: frozenset
    obligor: str
    counterparty: str
    deadline: int  # milliseconds


@dataclass(frozen=True)
class AddProhibition:
    role: str
    ops: frozenset


@dataclass(frozen=True)
class SetState:
    state: str


@dataclass(frozen=True)
class SetCompliance:
    value: bool


Action = Union[RemoveRight, AddRight, AddObligation, AddProhibition, SetState, SetCompliance]


@dataclass(frozen=True)
class Rule:
    name: str
    pattern: EventPattern
    guard: Optional[Guard] = None
    then: tuple = ()
    otherwise: tuple = ()


@dataclass(frozen=True)
class RuleSet:
    contract: str
    roles: tuple
    operations: tuple
    states: tuple
    initial: str
    rules: tuple = field(default=())

    def rule(self, name: str) -> Rule:
        for r in self.rules:
            if r.name == name:
                return r
        raise KeyError(name)


def guard_roles(g: Optional[Guard]) -> list[str]:
    if g is None:
        return []
    if isinstance(g, (Rights, Pending, Prohibited)):
        return [g.role]
    if isinstance(g, StateIs):
        return []
    if isinstance(g, Not):
        return guard_roles(g.expr)
    return guard_roles(g.left) + guard_roles(g.right)


def guard_atoms(g: Optional[Guard]) -> list:
    if g is None:
        return []
    if isinstance(g, Not):
        return guard_atoms(g.expr)
    if isinstance(g, (And, Or)):
        return guard_atoms(g.left) + guard_atoms(g.right)
    return [g]
