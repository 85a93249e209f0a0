"""Clause-level semantic error detection and correction for LLM-generated SQL."""

from sqltriage.query_model import StructuredQuery, parse
from sqltriage.signals import Signal, SignalOutcome

__all__ = ["StructuredQuery", "parse", "Signal", "SignalOutcome"]

__version__ = "0.1.0"
