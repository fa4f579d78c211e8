from __future__ import annotations

import re
from dataclasses import dataclass

UNITS_MS = {"ms": 1, "s": 1000, "min": 60_000, "h": 3_600_000, "d": 86_400_000}

IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>\#[^\n]*)
  | (?P<duration>\d+(?:ms|min|s|h|d)(?![A-Za-z0-9_]))
  | (?P<number>\d+)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.\-]*)
  | (?P<symbol>[=,;(){}*])
""", re.VERBOSE)


class ParseError(Exception):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


@dataclass(frozen=True)
class Token:
    kind: str  # ident | string | duration | symbol | eof
    text: str
    line: int
    column: int
    value: object = None

    def __str__(self):
        return "end of input" if self.kind == "eof" else repr(self.text)


def _unescape(body: str) -> str:
    return re.sub(r"\\(.)", r"\1", body)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            if text[pos] == '"':
                raise ParseError(line, col, "unterminated string literal")
            raise ParseError(line, col, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        lexeme = m.group()
        if kind == "number":
            raise ParseError(line, col, f"duration {lexeme} needs a unit (ms, s, min, h, d)")
        if kind == "duration":
            digits = re.match(r"\d+", lexeme).group()
            value = int(digits) * UNITS_MS[lexeme[len(digits):]]
            tokens.append(Token(kind, lexeme, line, col, value))
        elif kind == "string":
            tokens.append(Token(kind, lexeme, line, col, _unescape(lexeme[1:-1])))
        elif kind in ("ident", "symbol"):
            tokens.append(Token(kind, lexeme, line, col, lexeme))
        newlines = lexeme.count("\n")
        if newlines:
            line += newlines
            line_start = pos + lexeme.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens
