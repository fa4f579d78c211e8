"""Contract compliance checking on a trusted third party or a simulated chain."""

from .dsl import ParseError, parse, pretty_print, validate
from .engine import Event, InstanceManager, Verdict
from .ledger import Ledger

__version__ = "0.1.0"

__all__ = ["Event", "InstanceManager", "Ledger", "ParseError", "Verdict", "parse",
           "pretty_print", "validate", "__version__"]
