"""Error-report assembly: per-signal descriptions, instructions, confidence.

Each flagged signal becomes a small JSON report a human or an LLM fixer can
act on: what looks wrong, how to approach fixing it, the offending clauses,
and how much to trust the signal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from sqltriage.signals import DB_SIGNALS, Signal, SignalOutcome, signal_order

CONFIDENCE_LEVELS = ("high", "medium", "low")


@dataclass(frozen=True)
class SignalRegistryEntry:
    signal_id: Signal
    description: str
    correction_instruction: str
    group: str                      # "DB" | "LLM"
    example: str | None = None


def _entry(signal: Signal, description: str, instruction: str) -> SignalRegistryEntry:
    group = "DB" if signal in DB_SIGNALS else "LLM"
    return SignalRegistryEntry(signal_id=signal, description=description,
                               correction_instruction=instruction, group=group)


REPORT_REGISTRY: dict = {
    e.signal_id: e for e in (
        _entry(
            Signal.ABNORMAL_RESULT,
            "The SQL query produces an abnormal result such as an empty result "
            "or a column that is entirely zero or NULL, which may indicate an "
            "incorrect query.",
            "Review and revise the SQL query so that it produces a plausible, "
            "non-degenerate result for the question.",
        ),
        _entry(
            Signal.EMPTY_PREDICATE,
            "The SQL query contains a filter predicate that matches no rows in "
            "the database, which may indicate an incorrect literal value.",
            "Review and revise the predicate to use values that exist in the "
            "database, checking spelling and letter case.",
        ),
        _entry(
            Signal.INCORRECT_SUBQUERY_FILTER,
            "The SQL query compares a value against a subquery that returns "
            "more than one row, which may lead to runtime errors or wrong "
            "results.",
            "Review and revise the subquery so that it returns a single value, "
            "or rewrite the comparison to handle multiple rows.",
        ),
        _entry(
            Signal.INCORRECT_GROUPBY,
            "The SQL query uses a GROUP BY clause without any aggregate "
            "function, which may indicate a misunderstanding of the question.",
            "Review and revise the SQL query to aggregate grouped rows or "
            "remove the unnecessary GROUP BY clause.",
        ),
        _entry(
            Signal.INCORRECT_JOIN_PREDICATE,
            "The SQL query joins tables on columns that are not related by a "
            "foreign key or a shared key, which may produce meaningless "
            "matches.",
            "Review and revise the join predicates to connect tables through "
            "valid key relationships.",
        ),
        # The two texts below are the published wording and must not change.
        _entry(
            Signal.SUBOPTIMAL_JOIN_TREE,
            "The SQL query uses more tables than necessary in the join "
            "clauses, which may lead to potential errors.",
            "Review and revise the SQL query to include only the essential "
            "tables in the join clauses.",
        ),
        _entry(
            Signal.TABLE_SIMILARITY,
            "The SQL query uses a table that is very similar to another table "
            "in the database, which may indicate the wrong table was chosen.",
            "Review and revise the SQL query to confirm the chosen table, "
            "considering the similar alternatives.",
        ),
        _entry(
            Signal.UNNECESSARY_SUBQUERY,
            "The SQL query uses more subqueries than necessary, which may make "
            "it overly complex and error prone.",
            "Review and revise the SQL query to simplify or remove subqueries, "
            "using joins where possible.",
        ),
        _entry(
            Signal.VALUE_AMBIGUITY,
            "The SQL query filters on a literal value that also appears in "
            "other columns of the database, which may mean the wrong column "
            "was filtered.",
            "Review and revise the filter to reference the column that best "
            "matches the question.",
        ),
        _entry(
            Signal.COLUMN_AMBIGUITY,
            "The SQL query uses a column while the database contains a very "
            "similar column that could also answer the question.",
            "Review and revise the SQL query to confirm the chosen column, "
            "considering the similar alternatives.",
        ),
        _entry(
            Signal.EVIDENCE_VIOLATION,
            "The SQL query does not reflect the evidence provided with the "
            "question.",
            "Review and revise the SQL query so that it follows the evidence "
            "exactly.",
        ),
        _entry(
            Signal.INSUFFICIENT_EVIDENCE,
            "There is not sufficient evidence to confirm that the SQL query "
            "answers the question correctly.",
            "Review and revise the SQL query, stating any assumptions needed "
            "to answer the question.",
        ),
        _entry(
            Signal.LLM_SELF_CHECK,
            "An overall assessment of the SQL query judged it unlikely to "
            "answer the question correctly.",
            "Review and revise the SQL query against the question step by "
            "step.",
        ),
        _entry(
            Signal.QUESTION_CLAUSE_LINKING,
            "At least one concept in the question links to a SQL clause with "
            "low confidence.",
            "Review and revise the low-confidence clauses so that each part of "
            "the question is faithfully represented.",
        ),
    )
}


@dataclass(frozen=True)
class ErrorReport:
    signal_id: Signal
    signal_description: str
    correction_instruction: str
    problematic_clauses: dict = field(default_factory=dict)
    confidence: str = "medium"
    example: str | None = None

    def __post_init__(self):
        if self.confidence not in CONFIDENCE_LEVELS:
            raise ValueError(f"unknown confidence level: {self.confidence!r}")


def assemble_report(outcome: SignalOutcome, confidence: str,
                    registry: dict | None = None,
                    example: str | None = None) -> ErrorReport:
    """Build the report for one flagged outcome at the given confidence."""
    if not outcome.flagged:
        raise ValueError("cannot assemble a report for an unflagged outcome")
    registry = registry or REPORT_REGISTRY
    entry = registry[outcome.signal_id]
    description = entry.description
    if entry.group == "LLM" and outcome.detail:
        description = f"{description} {outcome.detail}"
    return ErrorReport(
        signal_id=outcome.signal_id,
        signal_description=description,
        correction_instruction=entry.correction_instruction,
        problematic_clauses=dict(outcome.problematic_clauses),
        confidence=confidence,
        example=example if example is not None else entry.example,
    )


def report_mapping(report: ErrorReport) -> dict:
    """The serialized key set and order, as a plain dict."""
    doc = {"signal description": report.signal_description}
    if report.example is not None:
        doc["example(s)"] = report.example
    doc["correction instruction"] = report.correction_instruction
    doc["problematic clauses"] = report.problematic_clauses
    doc["confidence"] = report.confidence
    return doc


def serialize_report(report: ErrorReport) -> str:
    return json.dumps(report_mapping(report), indent=2)


def deserialize_report(text: str) -> ErrorReport:
    """Parse a serialized report; the signal is recovered from its description."""
    doc = json.loads(text)
    description = doc["signal description"]
    matches = [
        e for e in REPORT_REGISTRY.values()
        if description == e.description or description.startswith(e.description + " ")
    ]
    if len(matches) != 1:
        raise ValueError("cannot attribute report description to one signal")
    return ErrorReport(
        signal_id=matches[0].signal_id,
        signal_description=description,
        correction_instruction=doc["correction instruction"],
        problematic_clauses=doc["problematic clauses"],
        confidence=doc["confidence"],
        example=doc.get("example(s)"),
    )


def rank_reports(reports) -> list:
    """Confidence buckets high to low; ties keep signal registry order."""
    order = {level: i for i, level in enumerate(CONFIDENCE_LEVELS)}
    return sorted(reports, key=lambda r: (order[r.confidence],
                                          signal_order(r.signal_id)))
