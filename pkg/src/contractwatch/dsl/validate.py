"""Static checks over a parsed rule set."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .syntax import (AddObligation, AddProhibition, AddRight, Prohibited, RemoveRight, Rights,
                     RuleSet, guard_atoms, is_reserved_type)

UNREACHABLE_RULE = "unreachable-rule"
UNKNOWN_OPERATION = "unknown-operation"
UNDISCHARGEABLE_OBLIGATION = "obligation-without-discharging-rule"
RIGHT_PROHIBITION_CONFLICT = "right-prohibition-conflict-possible"


@dataclass(frozen=True)
class Diagnostic:
    code: str
    rule: Optional[str]
    message: str

    def __str__(self):
        where = f"rule {self.rule!r}: " if self.rule else ""
        return f"{self.code}: {where}{self.message}"


def _ops_referenced(rule) -> list[str]:
    ops = []
    if not is_reserved_type(rule.pattern.type):
        ops.append(rule.pattern.type)
    for atom in guard_atoms(rule.guard):
        if isinstance(atom, (Rights, Prohibited)):
            ops.append(atom.op)
    for a in rule.then + rule.otherwise:
        if isinstance(a, RemoveRight):
            ops.append(a.op)
        elif isinstance(a, (AddRight, AddObligation, AddProhibition)):
            ops.extend(sorted(a.ops))
    return ops


def validate(rs: RuleSet) -> list[Diagnostic]:
    """Return diagnostics in rule order; an empty list means the rule set is clean.

    Rules are selected by first pattern match, so a rule whose pattern is
    covered by an earlier rule's pattern can never fire, whatever its guard.
    """
    diags = []
    declared = set(rs.operations)

    for i, rule in enumerate(rs.rules):
        for earlier in rs.rules[:i]:
            if earlier.pattern.covers(rule.pattern):
                diags.append(Diagnostic(UNREACHABLE_RULE, rule.name,
                                        f"pattern is shadowed by earlier rule {earlier.name!r}"))
                break
        unknown = []
        for op in _ops_referenced(rule):
            if op not in declared and op not in unknown:
                unknown.append(op)
        for op in unknown:
            diags.append(Diagnostic(UNKNOWN_OPERATION, rule.name, f"operation {op!r} is not declared"))

    handled = {r.pattern.type for r in rs.rules}
    for rule in rs.rules:
        for a in rule.then + rule.otherwise:
            if isinstance(a, AddObligation):
                for op in sorted(a.ops - handled):
                    diags.append(Diagnostic(
                        UNDISCHARGEABLE_OBLIGATION, rule.name,
                        f"obligation {a.name!r} lists {op!r} but no rule handles {op!r} events"))

    granted, forbidden = {}, {}
    for rule in rs.rules:
        for a in rule.then + rule.otherwise:
            if isinstance(a, AddRight):
                for op in a.ops:
                    granted.setdefault((a.role, op), rule.name)
            elif isinstance(a, AddProhibition):
                for op in a.ops:
                    forbidden.setdefault((a.role, op), rule.name)
    for key in sorted(granted.keys() & forbidden.keys()):
        role, op = key
        diags.append(Diagnostic(
            RIGHT_PROHIBITION_CONFLICT, forbidden[key],
            f"{role} may be prohibited from {op!r} here while rule {granted[key]!r} grants it"))
    return diags
