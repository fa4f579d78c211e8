"""Contract rule language: parse, print and check rule sets."""

from .lexer import ParseError
from .parser import parse
from .printer import pretty_print
from .syntax import *  # noqa: F401,F403
from .validate import Diagnostic, validate

__all__ = ["ParseError", "parse", "pretty_print", "validate", "Diagnostic"]
