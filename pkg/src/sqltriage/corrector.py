"""Iterative signal-guided SQL correction with guardrail and audit stages.

One run: detect errors, repeatedly pick the most critical report and ask the
model for a targeted fix (with a bounded syntax-repair loop), retire each
fixed signal, re-detect, then apply a final guardrail fix and an A/B audit
between the original and revised queries.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from enum import Enum
from pathlib import Path

from sqltriage.aggregator import confidence_bucket
from sqltriage.completion import CompletionError, CompletionParams
from sqltriage.llm_signals import (
    MalformedJson,
    NoJsonFound,
    parse_json_block,
    render_db_description,
)
from sqltriage.pipeline import DetectionPipeline
from sqltriage.prompt_library import load_template, render_prompt
from sqltriage.query_model import parse
from sqltriage.reporting import ErrorReport, assemble_report, serialize_report
from sqltriage.signals import ALL_SIGNALS, Signal


class TerminationReason(str, Enum):
    NO_ERRORS = "NO_ERRORS"
    MAX_ITER = "MAX_ITER"


@dataclass
class CorrectionConfig:
    max_iter: int = 5
    guardrail_signal: Signal | None = Signal.ABNORMAL_RESULT
    enabled_signals: tuple = ALL_SIGNALS
    syntax_repair_budget: int = 3
    auditor_enabled: bool = True
    selector_enabled: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if (self.guardrail_signal is not None
                and self.guardrail_signal not in self.enabled_signals):
            raise ValueError("guardrail signal must be among the enabled signals")


@dataclass
class IterationTrace:
    selected_signal: str
    selected_report: dict
    fixer_prompt: str
    raw_responses: list = field(default_factory=list)
    revised_sql: str = ""
    syntax_repairs_used: int = 0
    flagged_after: list = field(default_factory=list)
    notes: list = field(default_factory=list)


@dataclass
class CorrectionTrace:
    original_sql: str
    iterations: list = field(default_factory=list)
    guardrail_fired: bool = False
    audit: dict = field(default_factory=dict)
    final_sql: str = ""
    terminated_by: str = TerminationReason.NO_ERRORS.value
    notes: list = field(default_factory=list)

    @property
    def fixed_signals(self) -> list:
        return [it.selected_signal for it in self.iterations]


@dataclass
class CorrectionResult:
    final_sql: str
    trace: CorrectionTrace


_PARAMS = CompletionParams(temperature=0.0, max_tokens=4096)
_SQL_FENCE_RE = re.compile(r"```sql\s*\n(.*?)```", re.DOTALL | re.IGNORECASE)
_ANY_FENCE_RE = re.compile(r"```[a-zA-Z]*\s*\n(.*?)```", re.DOTALL)


def extract_sql(response: str) -> str | None:
    """Pull the SQL out of a model response: sql fence, any fence, bare text."""
    m = _SQL_FENCE_RE.search(response)
    if m is None:
        m = _ANY_FENCE_RE.search(response)
    if m is not None:
        text = m.group(1).strip()
        return text or None
    text = response.strip()
    if text.upper().startswith(("SELECT", "WITH", "(")):
        return text
    return None


def select_error(question: str, db_description: str, sql: str, reports: list,
                 client, enabled: bool = True) -> ErrorReport:
    """Ask the model which ranked report to fix first; fall back to rank 1."""
    if not reports:
        raise ValueError("select_error requires at least one report")
    if len(reports) == 1 or not enabled or client is None:
        return reports[0]
    numbered = "\n\n".join(
        f"Report {i + 1}:\n{serialize_report(r)}" for i, r in enumerate(reports)
    )
    prompt = (
        "You are an experienced database administrator. A proposed SQL query "
        "for the user question below was analyzed and the following error "
        "reports were produced, ranked by confidence. Decide which single "
        "error is the most critical to fix first.\n\n"
        f"[Question] {question}\n\n"
        f"[Database Info]\n{db_description}\n\n"
        f"[SQL query] {sql}\n\n"
        f"{numbered}\n\n"
        "Answer with one JSON object in a ```json code fence: "
        '{"most_critical": <report number>, "reason": "..."}. '
        "Make sure you generate a valid json response.\n"
        "[Answer]"
    )
    try:
        parsed = parse_json_block(client.complete(prompt, _PARAMS))
        index = int(parsed["most_critical"])
    except (CompletionError, NoJsonFound, MalformedJson, KeyError,
            TypeError, ValueError):
        return reports[0]
    if 1 <= index <= len(reports):
        return reports[index - 1]
    return reports[0]


def fix_error(question: str, evidence: str, db_description: str, sql: str,
              report: ErrorReport, client, catalog,
              budget: int = 3) -> tuple:
    """One targeted fix via the correction prompt, with a syntax-repair loop.

    Returns (revised_sql, repairs_used, prompt, raw_responses, notes); falls
    back to the input SQL when every attempt stays unparseable.
    """
    prompt = render_prompt(
        load_template("sql_correction"),
        question=question, evidence=evidence, db_desc=db_description,
        old_sql=sql, error_report=serialize_report(report),
    )
    responses: list[str] = []
    notes: list[str] = []
    sent = prompt
    for attempt in range(1 + budget):
        try:
            response = client.complete(sent, _PARAMS)
        except CompletionError as exc:
            notes.append(f"completion failed: {exc}")
            return sql, attempt, prompt, responses, notes
        responses.append(response)
        candidate = extract_sql(response)
        if candidate is None:
            diagnostic = "no SQL code block found in the response"
        else:
            parsed = parse(candidate, catalog)
            if parsed.parse_ok:
                return candidate, attempt, prompt, responses, notes
            diagnostic = parsed.parse_error or "SQL failed to parse"
        sent = (
            prompt
            + f"\n\nYour previous answer could not be used: {diagnostic}. "
            "Please answer again with the corrected SQL in a ```sql code block."
        )
    notes.append("syntax repair budget exhausted; keeping the input SQL")
    return sql, budget, prompt, responses, notes


def audit(question: str, evidence: str, db_description: str, original: str,
          revised: str, client) -> tuple:
    """A/B choice between original and revised; returns (chosen, record)."""
    if revised == original:
        return original, {"choice": "A", "reason": "queries identical; no call"}
    prompt = (
        "You are an experienced database administrator. Two SQL queries were "
        "proposed for the user question below. Select the version that best "
        "answers the question.\n\n"
        f"[Question] {question}. {evidence}\n\n"
        f"[Database Info]\n{db_description}\n\n"
        f"[Query A]\n```sql\n{original}\n```\n\n"
        f"[Query B]\n```sql\n{revised}\n```\n\n"
        "Answer with one JSON object in a ```json code fence: "
        '{"choice": "A" or "B", "reason": "..."}. '
        "Make sure you generate a valid json response.\n"
        "[Answer]"
    )
    try:
        response = client.complete(prompt, _PARAMS)
        parsed = parse_json_block(response)
        choice = str(parsed.get("choice", "")).strip().upper()
    except (CompletionError, NoJsonFound, MalformedJson):
        return "", {"prompt": prompt, "choice": None, "fallback": True}
    record = {"prompt": prompt, "response": response, "choice": choice}
    if choice == "B":
        return revised, record
    if choice == "A":
        return original, record
    record["fallback"] = True
    return "", record


def run_correction(question: str, sql: str, pipeline: DetectionPipeline,
                   client, config: CorrectionConfig | None = None,
                   evidence: str = "") -> CorrectionResult:
    """The full iterative correction loop over one query."""
    config = config or CorrectionConfig()
    trace = CorrectionTrace(original_sql=sql)
    db_description = render_db_description(pipeline.catalog,
                                           pipeline.sample_values)
    active = set(config.enabled_signals)
    current = sql

    result = pipeline.detect(question, current, evidence, enabled=active)
    reports = result.reports
    iterations = 0
    while reports and iterations < config.max_iter:
        report = select_error(question, db_description, current, reports,
                              client, enabled=config.selector_enabled)
        revised, repairs, prompt, responses, notes = fix_error(
            question, evidence, db_description, current, report, client,
            pipeline.catalog, budget=config.syntax_repair_budget,
        )
        active.discard(report.signal_id)
        current = revised
        result = pipeline.detect(question, current, evidence, enabled=active)
        reports = result.reports
        trace.iterations.append(IterationTrace(
            selected_signal=report.signal_id.value,
            selected_report=json.loads(serialize_report(report)),
            fixer_prompt=prompt,
            raw_responses=responses,
            revised_sql=current,
            syntax_repairs_used=repairs,
            flagged_after=[s.value for s in result.flagged_signals],
            notes=notes,
        ))
        iterations += 1
    trace.terminated_by = (TerminationReason.NO_ERRORS.value if not reports
                           else TerminationReason.MAX_ITER.value)

    guardrail = config.guardrail_signal
    original_fired_guardrail = False
    if guardrail is not None:
        original_fired_guardrail = _guardrail_fires(pipeline, question, sql,
                                                    evidence, guardrail)
        already_fixed = guardrail.value in trace.fixed_signals
        if not already_fixed and _guardrail_fires(pipeline, question, current,
                                                  evidence, guardrail):
            trace.guardrail_fired = True
            outcome = next(
                o for o in pipeline.run_signals(question, current, evidence,
                                                enabled={guardrail})
                if o.signal_id is guardrail and o.flagged
            )
            report = assemble_report(
                outcome, confidence_bucket(pipeline.label_model, guardrail))
            revised, repairs, prompt, responses, notes = fix_error(
                question, evidence, db_description, current, report, client,
                pipeline.catalog, budget=config.syntax_repair_budget,
            )
            current = revised
            trace.iterations.append(IterationTrace(
                selected_signal=guardrail.value,
                selected_report=json.loads(serialize_report(report)),
                fixer_prompt=prompt,
                raw_responses=responses,
                revised_sql=current,
                syntax_repairs_used=repairs,
                flagged_after=[
                    s.value for s in pipeline.detect(
                        question, current, evidence, enabled=active,
                    ).flagged_signals
                ],
                notes=notes + ["guardrail fix"],
            ))

    final = current
    if config.auditor_enabled and current != sql:
        chosen, record = audit(question, evidence, db_description, sql,
                               current, client)
        trace.audit = record
        if chosen:
            final = chosen
        else:
            revised_clears = guardrail is not None and not _guardrail_fires(
                pipeline, question, current, evidence, guardrail)
            if guardrail is not None and original_fired_guardrail and revised_clears:
                final = current
                trace.audit["resolution"] = "revised kept: newly clears guardrail"
            else:
                final = sql
                trace.audit["resolution"] = "original kept: conservative fallback"
    trace.final_sql = final
    return CorrectionResult(final_sql=final, trace=trace)


def _guardrail_fires(pipeline: DetectionPipeline, question: str, sql: str,
                     evidence: str, guardrail: Signal) -> bool:
    outcomes = pipeline.run_signals(question, sql, evidence,
                                    enabled={guardrail})
    return any(o.signal_id is guardrail and o.flagged for o in outcomes)


def save_trace(trace: CorrectionTrace, path) -> None:
    """Persist one correction trace as indented JSON."""
    doc = asdict(trace)
    doc["fixed_signals"] = trace.fixed_signals
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
