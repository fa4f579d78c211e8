"""Recursive-descent parser for contract rule sources.

Parsing stops at the first error. Role and state references are resolved
against the header while parsing, so a typo in either is reported at the
offending token; unknown operation names are left to ``validate``.
"""

from __future__ import annotations

from .lexer import ParseError, Token, tokenize
from .syntax import (STATUSES, WILDCARD, AddObligation, AddProhibition, AddRight, And,
                     EventPattern, Not, Or, Pending, Prohibited, RemoveRight, Rights, Rule,
                     RuleSet, SetCompliance, SetState, StateIs)


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.roles: tuple = ()
        self.states: tuple = ()

    # token helpers

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def advance(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, msg: str, tok: Token = None):
        tok = tok or self.tok
        raise ParseError(tok.line, tok.column, msg)

    def at_word(self, word: str) -> bool:
        return self.tok.kind == "ident" and self.tok.text == word

    def at_symbol(self, sym: str) -> bool:
        return self.tok.kind == "symbol" and self.tok.text == sym

    def word(self, word: str) -> Token:
        if not self.at_word(word):
            self.error(f"expected '{word}', found {self.tok}")
        return self.advance()

    def symbol(self, sym: str) -> Token:
        if not self.at_symbol(sym):
            self.error(f"expected '{sym}', found {self.tok}")
        return self.advance()

    def ident(self, what: str) -> Token:
        if self.tok.kind != "ident":
            self.error(f"expected {what}, found {self.tok}")
        return self.advance()

    def name(self, what: str) -> Token:
        if self.tok.kind not in ("ident", "string"):
            self.error(f"expected {what}, found {self.tok}")
        return self.advance()

    def string(self, what: str) -> Token:
        if self.tok.kind != "string":
            self.error(f"expected quoted {what}, found {self.tok}")
        return self.advance()

    def ident_list(self, what: str) -> list[Token]:
        items = [self.ident(what)]
        while self.at_symbol(","):
            self.advance()
            items.append(self.ident(what))
        seen = set()
        for t in items:
            if t.value in seen:
                self.error(f"duplicate {what} {t.text!r}", t)
            seen.add(t.value)
        return items

    def role(self, wildcard: bool = False) -> str:
        if wildcard and self.at_symbol("*"):
            self.advance()
            return WILDCARD
        t = self.ident("role")
        if t.value not in self.roles:
            self.error(f"undeclared role {t.text!r}", t)
        return t.value

    def state(self) -> str:
        t = self.ident("state")
        if t.value not in self.states:
            self.error(f"undeclared state {t.text!r}", t)
        return t.value

    # grammar

    def ruleset(self) -> RuleSet:
        self.word("contract")
        contract = self.name("contract name").value
        self.word("roles")
        self.roles = tuple(t.value for t in self.ident_list("role"))
        self.word("operations")
        operations = tuple(t.value for t in self.ident_list("operation"))
        self.word("states")
        self.states = tuple(t.value for t in self.ident_list("state"))
        self.word("initial")
        initial = self.state()
        rules = []
        names = set()
        while self.tok.kind != "eof":
            r, name_tok = self.rule()
            if r.name in names:
                self.error(f"duplicate rule name {r.name!r}", name_tok)
            names.add(r.name)
            rules.append(r)
        return RuleSet(contract, self.roles, operations, self.states, initial, tuple(rules))

    def rule(self) -> tuple[Rule, Token]:
        self.word("rule")
        name_tok = self.string("rule name")
        name = name_tok.value
        self.word("when")
        self.word("event")
        pattern = self.pattern()
        guard = None
        if self.at_word("if"):
            self.advance()
            guard = self.guard()
        self.word("then")
        then = self.actions()
        otherwise = ()
        if self.at_word("else"):
            self.advance()
            otherwise = self.actions()
        self.word("end")
        return Rule(name, pattern, guard, then, otherwise), name_tok

    def pattern(self) -> EventPattern:
        self.word("type")
        self.symbol("=")
        type_ = self.name("event type").value
        fields = {}
        for key in ("originator", "responder", "status"):
            if self.at_word(key):
                self.advance()
                self.symbol("=")
                if key == "status":
                    if self.at_symbol("*"):
                        self.advance()
                        fields[key] = WILDCARD
                    else:
                        t = self.ident("status")
                        if t.value not in STATUSES:
                            self.error(f"status must be success, failure or *, not {t.text!r}", t)
                        fields[key] = t.value
                else:
                    fields[key] = self.role(wildcard=True)
        return EventPattern(type_, **fields)

    # guard precedence: or < and < not < atom

    def guard(self):
        left = self.conj()
        while self.at_word("or"):
            self.advance()
            left = Or(left, self.conj())
        return left

    def conj(self):
        left = self.neg()
        while self.at_word("and"):
            self.advance()
            left = And(left, self.neg())
        return left

    def neg(self):
        if self.at_word("not"):
            self.advance()
            return Not(self.neg())
        return self.atom()

    def atom(self):
        if self.at_symbol("("):
            self.advance()
            g = self.guard()
            self.symbol(")")
            return g
        t = self.ident("guard predicate")
        self.symbol("(")
        if t.value == "rights":
            role = self.role()
            self.symbol(",")
            g = Rights(role, self.ident("operation").value)
        elif t.value == "prohibited":
            role = self.role()
            self.symbol(",")
            g = Prohibited(role, self.ident("operation").value)
        elif t.value == "pending":
            role = self.role()
            self.symbol(",")
            g = Pending(role, self.name("obligation name").value)
        elif t.value == "state":
            g = StateIs(self.state())
        else:
            self.error(f"unknown guard predicate {t.text!r}", t)
        self.symbol(")")
        return g

    def actions(self) -> tuple:
        acts = [self.action()]
        while self.at_symbol(";"):
            self.advance()
            acts.append(self.action())
        return tuple(acts)

    def op_set(self) -> frozenset:
        self.symbol("{")
        ops = [self.ident("operation")]
        while self.at_symbol(","):
            self.advance()
            ops.append(self.ident("operation"))
        self.symbol("}")
        return frozenset(t.value for t in ops)

    def action(self):
        t = self.ident("action")
        kind = t.value
        self.symbol("(")
        if kind == "remove_right":
            role = self.role()
            self.symbol(",")
            op = self.ident("operation").value
            self.symbol(",")
            act = RemoveRight(role, op, self.role())
        elif kind == "add_right":
            role = self.role()
            self.symbol(",")
            ops = self.op_set()
            self.symbol(",")
            other = self.tok
            act = AddRight(role, ops, self.role())
            if act.counterparty == role:
                self.error("a right's holder and counterparty must differ", other)
        elif kind == "add_obligation":
            name = self.name("obligation name").value
            self.symbol(",")
            ops = self.op_set()
            self.symbol(",")
            obligor = self.role()
            self.symbol(",")
            counterparty = self.role()
            self.symbol(",")
            if self.tok.kind != "duration":
                self.error(f"expected duration, found {self.tok}")
            dur = self.advance()
            if dur.value <= 0:
                self.error("obligation deadline must be positive", dur)
            act = AddObligation(name, ops, obligor, counterparty, dur.value)
        elif kind == "add_prohibition":
            role = self.role()
            self.symbol(",")
            act = AddProhibition(role, self.op_set())
        elif kind == "set_state":
            act = SetState(self.state())
        elif kind == "compliant":
            v = self.ident("true or false")
            if v.value not in ("true", "false"):
                self.error(f"expected true or false, found {v}", v)
            act = SetCompliance(v.value == "true")
        else:
            self.error(f"unknown action {t.text!r}", t)
        self.symbol(")")
        return act


def parse(text: str) -> RuleSet:
    return _Parser(text).ruleset()
