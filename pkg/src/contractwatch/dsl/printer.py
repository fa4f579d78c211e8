from __future__ import annotations

from .lexer import IDENT_RE
from .syntax import (AddObligation, AddProhibition, AddRight, And, Not, Or, Pending,
                     Prohibited, RemoveRight, Rights, RuleSet, SetCompliance, SetState, StateIs)

_UNITS = (("d", 86_400_000), ("h", 3_600_000), ("min", 60_000), ("s", 1000))


def format_duration(ms: int) -> str:
    for unit, size in _UNITS:
        if ms % size == 0:
            return f"{ms // size}{unit}"
    return f"{ms}ms"


def quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def name(s: str) -> str:
    m = IDENT_RE.fullmatch(s)
    return s if m else quote(s)


def op_set(ops) -> str:
    return "{" + ", ".join(sorted(ops)) + "}"


_PREC = {Or: 1, And: 2, Not: 3}


def format_guard(g, parent: int = 0, right_side: bool = False) -> str:
    prec = _PREC.get(type(g), 4)
    if isinstance(g, Rights):
        s = f"rights({g.role}, {g.op})"
    elif isinstance(g, Prohibited):
        s = f"prohibited({g.role}, {g.op})"
    elif isinstance(g, Pending):
        s = f"pending({g.role}, {quote(g.name)})"
    elif isinstance(g, StateIs):
        s = f"state({g.state})"
    elif isinstance(g, Not):
        s = "not " + format_guard(g.expr, prec)
    else:
        word = "or" if isinstance(g, Or) else "and"
        s = f"{format_guard(g.left, prec)} {word} {format_guard(g.right, prec, True)}"
    # binary operators parse left-associative, so an equal-precedence right child needs parens
    if prec < parent or (right_side and prec == parent and prec < 3):
        return f"({s})"
    return s


def format_action(a) -> str:
    if isinstance(a, RemoveRight):
        return f"remove_right({a.role}, {a.op}, {a.counterparty})"
    if isinstance(a, AddRight):
        return f"add_right({a.role}, {op_set(a.ops)}, {a.counterparty})"
    if isinstance(a, AddObligation):
        return (f"add_obligation({quote(a.name)}, {op_set(a.ops)}, {a.obligor}, "
                f"{a.counterparty}, {format_duration(a.deadline)})")
    if isinstance(a, AddProhibition):
        return f"add_prohibition({a.role}, {op_set(a.ops)})"
    if isinstance(a, SetState):
        return f"set_state({a.state})"
    if isinstance(a, SetCompliance):
        return f"compliant({'true' if a.value else 'false'})"
    raise TypeError(f"not an action: {a!r}")


def _action_block(keyword: str, actions) -> list[str]:
    pad = " " * (len(keyword) + 3)
    lines = [f"  {keyword} {format_action(actions[0])}"]
    lines += [f"{pad}{format_action(a)}" for a in actions[1:]]
    return [line + ";" for line in lines[:-1]] + [lines[-1]]


def pretty_print(rs: RuleSet) -> str:
    out = [
        f"contract {name(rs.contract)}",
        f"roles {', '.join(rs.roles)}",
        f"operations {', '.join(rs.operations)}",
        f"states {', '.join(rs.states)} initial {rs.initial}",
    ]
    for r in rs.rules:
        p = r.pattern
        out.append("")
        out.append(f"rule {quote(r.name)}")
        out.append(f"  when event type={name(p.type)} originator={p.originator} "
                   f"responder={p.responder} status={p.status}")
        if r.guard is not None:
            out.append(f"  if {format_guard(r.guard)}")
        out += _action_block("then", r.then)
        if r.otherwise:
            out += _action_block("else", r.otherwise)
        out.append("end")
    return "\n".join(out) + "\n"
