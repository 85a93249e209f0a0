"""Core signal vocabulary shared by the database and LLM detector layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from sqltriage.exec_probe import ExecLimits
from sqltriage.query_model import StructuredQuery


class Signal(Enum):
    """The fourteen error signals, in canonical registry order."""

    ABNORMAL_RESULT = "abnormal_result"
    EMPTY_PREDICATE = "empty_predicate"
    INCORRECT_SUBQUERY_FILTER = "incorrect_subquery_filter"
    INCORRECT_GROUPBY = "incorrect_groupby"
    INCORRECT_JOIN_PREDICATE = "incorrect_join_predicate"
    SUBOPTIMAL_JOIN_TREE = "suboptimal_join_tree"
    TABLE_SIMILARITY = "table_similarity"
    UNNECESSARY_SUBQUERY = "unnecessary_subquery"
    VALUE_AMBIGUITY = "value_ambiguity"
    COLUMN_AMBIGUITY = "column_ambiguity"
    EVIDENCE_VIOLATION = "evidence_violation"
    INSUFFICIENT_EVIDENCE = "insufficient_evidence"
    LLM_SELF_CHECK = "llm_self_check"
    QUESTION_CLAUSE_LINKING = "question_clause_linking"


DB_SIGNALS = (
    Signal.ABNORMAL_RESULT,
    Signal.EMPTY_PREDICATE,
    Signal.INCORRECT_SUBQUERY_FILTER,
    Signal.INCORRECT_GROUPBY,
    Signal.INCORRECT_JOIN_PREDICATE,
    Signal.SUBOPTIMAL_JOIN_TREE,
    Signal.TABLE_SIMILARITY,
    Signal.UNNECESSARY_SUBQUERY,
    Signal.VALUE_AMBIGUITY,
)

LLM_SIGNALS = (
    Signal.COLUMN_AMBIGUITY,
    Signal.EVIDENCE_VIOLATION,
    Signal.INSUFFICIENT_EVIDENCE,
    Signal.LLM_SELF_CHECK,
    Signal.QUESTION_CLAUSE_LINKING,
)

ALL_SIGNALS = DB_SIGNALS + LLM_SIGNALS

_ORDER = {s: i for i, s in enumerate(ALL_SIGNALS)}


def signal_order(signal: Signal) -> int:
    return _ORDER[signal]


@dataclass
class SignalOutcome:
    """One signal's verdict on one query."""

    signal_id: Signal
    flagged: bool
    problematic_clauses: dict = field(default_factory=dict)
    detail: str = ""
    raw_evidence: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.flagged and self.problematic_clauses:
            raise ValueError("unflagged outcomes must carry no problematic clauses")


@dataclass
class SignalThresholds:
    """Tunable signal parameters; defaults mirror the published settings."""

    min_group_size: int = 2       # table similarity: smallest column group kept
    subquery_threshold: int = 3   # unnecessary subquery: flag when strictly above


@dataclass
class DetectionContext:
    """Everything a signal needs to judge one query."""

    question: str
    sq: StructuredQuery
    catalog: object
    db: object  # database path or open connection
    evidence: str | None = None
    limits: ExecLimits = field(default_factory=ExecLimits)
    thresholds: SignalThresholds = field(default_factory=SignalThresholds)
