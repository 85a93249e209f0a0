"""LLM-judged error signals: evidence checks, ambiguity checks, self-checks.

Each signal renders a stored prompt template, sends it through a completion
client at temperature 0, and parses a JSON verdict with bounded retries.  Any
backend or parse failure downgrades the signal to not-flagged with a note so
detection never crashes on a flaky model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum

from sqltriage.catalog import DatabaseCatalog
from sqltriage.completion import CompletionError, CompletionParams
from sqltriage.prompt_library import load_template, render_prompt
from sqltriage.signals import LLM_SIGNALS, Signal, SignalOutcome

RETRY_BUDGET = 2
RETRY_SUFFIX = "\nReturn valid json only."


class NoJsonFound(Exception):
    """Response contains nothing that looks like a JSON object."""


class MalformedJson(Exception):
    """JSON-like content found but unparseable even after repair."""


class SelfCheckMode(str, Enum):
    BOOL = "BOOL"
    PROB = "PROB"


class RunMode(str, Enum):
    PER_SIGNAL = "PER_SIGNAL"
    BATCHED = "BATCHED"


@dataclass(frozen=True)
class PromptContext:
    """Inputs shared by all LLM-signal prompts for one query."""

    question: str
    evidence: str
    db_description: str
    sql: str


def build_prompt_context(question: str, evidence: str, catalog: DatabaseCatalog,
                         sql: str, sample_values=None) -> PromptContext:
    return PromptContext(
        question=question,
        evidence=evidence or "",
        db_description=render_db_description(catalog, sample_values),
        sql=sql,
    )


def render_db_description(catalog: DatabaseCatalog, sample_values=None) -> str:
    """Render the catalog as bracketed per-table column listings.

    sample_values maps "table.column" (lowercase) to a list of frequent
    values; columns without samples render as `(name, name.)`.
    """
    sample_values = sample_values or {}
    blocks = []
    for key in sorted(catalog.tables):
        table = catalog.tables[key]
        lines = [f"# Table: {table.name}", "["]
        for col in table.columns:
            entry = f"{col.name}, {col.name}."
            samples = sample_values.get(f"{key}.{col.name.lower()}")
            if samples:
                rendered = ", ".join(repr(v) for v in samples)
                entry += f" Value examples: [{rendered}]."
            lines.append(f"  ({entry}),")
        lines.append("]")
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


# ---------------------------------------------------------------------------
# JSON extraction


_FENCED_JSON_RE = re.compile(r"```json\s*\n(.*?)```", re.DOTALL)
_FENCED_ANY_RE = re.compile(r"```[a-zA-Z]*\s*\n(.*?)```", re.DOTALL)


def _balanced_spans(text: str):
    """Quote-aware brace-balanced object candidates, by start position."""
    for start, ch in enumerate(text):
        if ch != "{":
            continue
        depth = 0
        in_string = False
        escaped = False
        for idx in range(start, len(text)):
            c = text[idx]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
            elif c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    yield text[start:idx + 1]
                    break


def _drop_trailing_commas(text: str) -> str:
    """Remove commas directly before a closer, outside of string literals."""
    out = []
    in_string = False
    escaped = False
    for idx, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            out.append(ch)
            continue
        if ch == '"':
            in_string = True
            out.append(ch)
            continue
        if ch == ",":
            rest = text[idx + 1:].lstrip()
            if rest.startswith("}") or rest.startswith("]"):
                continue
        out.append(ch)
    return "".join(out)


def _repair_variants(candidate: str):
    """Mechanical repairs for common LLM JSON mistakes, mildest first."""
    yield candidate
    stripped = candidate.strip()
    variants = [stripped]
    if stripped.startswith("{{") and stripped.endswith("}}"):
        variants.append(stripped[1:-1].strip())
    for base in list(variants):
        variants.append(_drop_trailing_commas(base))
        variants.append(_patch_lines(base))
        variants.append(_drop_trailing_commas(_patch_lines(base)))
    seen = set()
    for v in variants:
        if v not in seen:
            seen.add(v)
            yield v


def _unescaped_quotes(line: str) -> int:
    count = 0
    escaped = False
    for ch in line:
        if escaped:
            escaped = False
        elif ch == "\\":
            escaped = True
        elif ch == '"':
            count += 1
    return count


def _patch_lines(text: str) -> str:
    """Close unterminated strings, add missing commas, drop trailing commas."""
    lines = text.split("\n")
    content = [i for i, ln in enumerate(lines) if ln.strip()]
    for pos, i in enumerate(content):
        line = lines[i].rstrip()
        nxt = lines[content[pos + 1]].lstrip() if pos + 1 < len(content) else ""
        if _unescaped_quotes(line) % 2 == 1 and nxt.rstrip(",") in ("}", "}}", "]"):
            line += '"'
        bare = line.rstrip(",").rstrip()
        if nxt.startswith('"') and re.search(r'("|\d|true|false|null|\}|\])$', bare):
            line = bare + ","
        elif nxt.rstrip(",") in ("}", "}}", "]") and line.endswith(","):
            line = line[:-1]
        lines[i] = line
    return "\n".join(lines)


def parse_json_block(response: str) -> dict:
    """Extract the first parseable JSON object from a model response.

    Preference order: fenced json blocks, any fenced block, brace-balanced
    spans.  Strict parsing is tried before mechanical repair.
    """
    candidates = []
    candidates.extend(m.group(1) for m in _FENCED_JSON_RE.finditer(response))
    candidates.extend(m.group(1) for m in _FENCED_ANY_RE.finditer(response))
    candidates.extend(_balanced_spans(response))
    if not candidates:
        if "{" not in response:
            raise NoJsonFound("response contains no JSON object")
        # unbalanced braces (e.g. an unterminated string swallowed the
        # closer): hand everything from the first brace to the repairs
        candidates.append(response[response.index("{"):])
    for candidate in candidates:
        for variant in _repair_variants(candidate):
            try:
                parsed = json.loads(variant)
            except json.JSONDecodeError:
                continue
            if isinstance(parsed, dict):
                return parsed
    # a stray opening brace still counts as JSON-like content
    raise MalformedJson("JSON-like content could not be parsed")


# ---------------------------------------------------------------------------
# Shared plumbing


_PARAMS = CompletionParams(temperature=0.0, max_tokens=4096)


def _ask(client, prompt: str) -> dict:
    """Complete and parse, retrying with a valid-json reminder on failure."""
    last: Exception | None = None
    for attempt in range(1 + RETRY_BUDGET):
        sent = prompt if attempt == 0 else prompt + RETRY_SUFFIX
        try:
            return parse_json_block(client.complete(sent, _PARAMS))
        except (CompletionError, NoJsonFound, MalformedJson) as exc:
            last = exc
    raise last


def _downgrade(signal: Signal, exc: Exception) -> SignalOutcome:
    return SignalOutcome(
        signal_id=signal,
        flagged=False,
        detail=f"signal skipped: {exc}",
        raw_evidence={"failure": str(exc)},
    )


def _truthy(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.strip().lower() in ("true", "yes")
    return False


def _falsy(value) -> bool:
    if isinstance(value, bool):
        return not value
    if isinstance(value, str):
        return value.strip().lower() in ("false", "no")
    return False


def _verdict_outcome(signal: Signal, parsed: dict, key: str, clause_label: str) -> SignalOutcome:
    """Outcome for the true/false-keyed signals (violation, insufficiency, ambiguity)."""
    explanation = str(parsed.get("explanation", "")).strip()
    if _truthy(parsed.get(key)):
        clause_text = str(parsed.get("clause") or parsed.get("clauses") or explanation
                          or f"{key} reported by the model")
        return SignalOutcome(
            signal_id=signal,
            flagged=True,
            problematic_clauses={clause_label: [clause_text]},
            detail=explanation,
            raw_evidence={"response": parsed},
        )
    return SignalOutcome(signal_id=signal, flagged=False, detail=explanation,
                         raw_evidence={"response": parsed})


# ---------------------------------------------------------------------------
# Signals


def sig_evidence_violation(ctx: PromptContext, client) -> SignalOutcome:
    """Flag when the model says the query contradicts the stated evidence."""
    prompt = render_prompt(
        load_template("evidence_violation"),
        question=ctx.question, evidence=ctx.evidence, sql_query=ctx.sql,
    )
    try:
        parsed = _ask(client, prompt)
    except Exception as exc:
        return _downgrade(Signal.EVIDENCE_VIOLATION, exc)
    return _verdict_outcome(Signal.EVIDENCE_VIOLATION, parsed,
                            "violates_evidence", "clauses violating the evidence")


def sig_insufficient_evidence(ctx: PromptContext, client) -> SignalOutcome:
    """Flag when the model says it lacks evidence to confirm the query."""
    prompt = render_prompt(
        load_template("insufficient_evidence"),
        question=ctx.question, evidence=ctx.evidence,
        db_desc_str=ctx.db_description, sql_query=ctx.sql,
    )
    try:
        parsed = _ask(client, prompt)
    except Exception as exc:
        return _downgrade(Signal.INSUFFICIENT_EVIDENCE, exc)
    return _verdict_outcome(Signal.INSUFFICIENT_EVIDENCE, parsed,
                            "insufficient_evidence", "clauses lacking evidence")


def sig_question_clause_linking(ctx: PromptContext, client) -> SignalOutcome:
    """Flag when any question-to-clause link comes back low confidence."""
    prompt = render_prompt(
        load_template("question_clause_linking"),
        question=ctx.question, evidence=ctx.evidence,
        db_desc_str=ctx.db_description, sql_query=ctx.sql,
    )
    try:
        parsed = _ask(client, prompt)
    except Exception as exc:
        return _downgrade(Signal.QUESTION_CLAUSE_LINKING, exc)
    return _linking_outcome(parsed)


def sig_column_ambiguity(ctx: PromptContext, client) -> SignalOutcome:
    """Flag when the model finds a near-interchangeable column alternative."""
    prompt = render_prompt(
        load_template("column_ambiguity"),
        question=ctx.question, evidence=ctx.evidence,
        db_desc_str=ctx.db_description, sql_query=ctx.sql,
    )
    try:
        parsed = _ask(client, prompt)
    except Exception as exc:
        return _downgrade(Signal.COLUMN_AMBIGUITY, exc)
    return _verdict_outcome(Signal.COLUMN_AMBIGUITY, parsed,
                            "alternative_column", "ambiguous columns")


def sig_llm_self_check(ctx: PromptContext, client,
                       mode: SelfCheckMode = SelfCheckMode.BOOL) -> SignalOutcome:
    """Ask the model for an overall verdict on its own query."""
    template = ("llm_self_check_bool" if mode is SelfCheckMode.BOOL
                else "llm_self_check_prob")
    prompt = render_prompt(
        load_template(template),
        question=ctx.question, evidence=ctx.evidence,
        db_desc_str=ctx.db_description, sql_query=ctx.sql,
    )
    try:
        parsed = _ask(client, prompt)
    except Exception as exc:
        return _downgrade(Signal.LLM_SELF_CHECK, exc)
    return self_check_outcome(parsed, mode)


def self_check_outcome(parsed: dict, mode: SelfCheckMode) -> SignalOutcome:
    """Interpret a parsed self-check response under the given mode."""
    if mode is SelfCheckMode.BOOL:
        explanation = str(parsed.get("explanation", "")).strip()
        if _falsy(parsed.get("correct")):
            return SignalOutcome(
                signal_id=Signal.LLM_SELF_CHECK, flagged=True,
                problematic_clauses={
                    "self-check": [explanation or "model judged the query incorrect"],
                },
                detail=explanation,
                raw_evidence={"response": parsed},
            )
        return SignalOutcome(signal_id=Signal.LLM_SELF_CHECK, flagged=False,
                             detail=explanation, raw_evidence={"response": parsed})
    try:
        probability = float(parsed.get("probability"))
    except (TypeError, ValueError) as exc:
        return _downgrade(Signal.LLM_SELF_CHECK, exc)
    if not 0.0 <= probability <= 1.0:
        return _downgrade(Signal.LLM_SELF_CHECK,
                          ValueError(f"probability out of range: {probability}"))
    if probability < 0.5:
        return SignalOutcome(
            signal_id=Signal.LLM_SELF_CHECK, flagged=True,
            problematic_clauses={
                "self-check": [f"model-estimated probability of correctness {probability}"],
            },
            detail=f"probability {probability}",
            raw_evidence={"response": parsed, "probability": probability},
        )
    return SignalOutcome(signal_id=Signal.LLM_SELF_CHECK, flagged=False,
                         detail=f"probability {probability}",
                         raw_evidence={"response": parsed, "probability": probability})


# ---------------------------------------------------------------------------
# Runner


_BATCH_SECTIONS = {
    Signal.COLUMN_AMBIGUITY: (
        "column_ambiguity",
        'whether any database column is very similar to one used in the SQL and '
        'could also answer the question: {"alternative_column": true/false, '
        '"explanation": "..."}',
    ),
    Signal.EVIDENCE_VIOLATION: (
        "evidence_violation",
        'whether the SQL contradicts any evidence stated with the question: '
        '{"violates_evidence": true/false, "explanation": "..."}',
    ),
    Signal.INSUFFICIENT_EVIDENCE: (
        "insufficient_evidence",
        'whether you lack sufficient evidence to confirm the SQL answers the '
        'question: {"insufficient_evidence": true/false, "explanation": "..."}',
    ),
    Signal.LLM_SELF_CHECK: (
        "llm_self_check",
        'your overall verdict on the SQL: {"correct": true/false, '
        '"explanation": "..."}',
    ),
    Signal.QUESTION_CLAUSE_LINKING: (
        "question_clause_linking",
        'a map linking each question entity to its SQL clause with your '
        'confidence: {"<(entity, clause)>": "yes/no"}',
    ),
}

_BATCH_SELF_CHECK_PROB = (
    "llm_self_check",
    'the probability between 0.0 and 1.0 that the SQL correctly answers the '
    'question: {"probability": <number>}',
)


def _batched_prompt(ctx: PromptContext, enabled, self_check_mode: SelfCheckMode) -> str:
    parts = [
        "You are an experienced database administrator reviewing a proposed "
        "SQL query for a user question. Perform every numbered check below "
        "and answer all of them in a single JSON object.",
        "",
        f"[Question] {ctx.question}. {ctx.evidence}",
        "",
        ctx.db_description,
        "",
        f"[SQL query] {ctx.sql}",
        "",
        "Checks:",
    ]
    keys = []
    for idx, signal in enumerate(s for s in LLM_SIGNALS if s in enabled):
        key, description = _BATCH_SECTIONS[signal]
        if signal is Signal.LLM_SELF_CHECK and self_check_mode is SelfCheckMode.PROB:
            key, description = _BATCH_SELF_CHECK_PROB
        keys.append(key)
        parts.append(f"{idx + 1}. \"{key}\": {description}")
    parts.append("")
    parts.append(
        "Output one JSON object in a ```json code fence whose keys are exactly: "
        + ", ".join(f'"{k}"' for k in keys)
        + ". Make sure you generate a valid json response."
    )
    parts.append("[Answer]")
    return "\n".join(parts)


def run_llm_signals(ctx: PromptContext, client, enabled=None,
                    mode: RunMode = RunMode.PER_SIGNAL,
                    self_check_mode: SelfCheckMode = SelfCheckMode.BOOL) -> list:
    """Run the enabled LLM signals and return outcomes in registry order."""
    enabled = set(LLM_SIGNALS if enabled is None else enabled)
    ordered = [s for s in LLM_SIGNALS if s in enabled]
    if not ordered:
        return []
    if mode is RunMode.PER_SIGNAL:
        runners = {
            Signal.COLUMN_AMBIGUITY: lambda: sig_column_ambiguity(ctx, client),
            Signal.EVIDENCE_VIOLATION: lambda: sig_evidence_violation(ctx, client),
            Signal.INSUFFICIENT_EVIDENCE: lambda: sig_insufficient_evidence(ctx, client),
            Signal.LLM_SELF_CHECK: lambda: sig_llm_self_check(ctx, client, self_check_mode),
            Signal.QUESTION_CLAUSE_LINKING: lambda: sig_question_clause_linking(ctx, client),
        }
        return [runners[s]() for s in ordered]
    prompt = _batched_prompt(ctx, enabled, self_check_mode)
    try:
        parsed = _ask(client, prompt)
    except Exception as exc:
        return [_downgrade(s, exc) for s in ordered]
    outcomes = []
    for signal in ordered:
        key = _BATCH_SECTIONS[signal][0]
        sub = parsed.get(key)
        if not isinstance(sub, dict):
            outcomes.append(_downgrade(
                signal, MalformedJson(f"batched response missing {key!r}")))
            continue
        if signal is Signal.LLM_SELF_CHECK:
            outcomes.append(self_check_outcome(sub, self_check_mode))
        elif signal is Signal.QUESTION_CLAUSE_LINKING:
            outcomes.append(_linking_outcome(sub))
        else:
            flag_key, clause_label = {
                Signal.COLUMN_AMBIGUITY: ("alternative_column", "ambiguous columns"),
                Signal.EVIDENCE_VIOLATION: ("violates_evidence",
                                            "clauses violating the evidence"),
                Signal.INSUFFICIENT_EVIDENCE: ("insufficient_evidence",
                                               "clauses lacking evidence"),
            }[signal]
            outcomes.append(_verdict_outcome(signal, sub, flag_key, clause_label))
    return outcomes


def _linking_outcome(parsed: dict) -> SignalOutcome:
    if not parsed:
        return SignalOutcome(
            signal_id=Signal.QUESTION_CLAUSE_LINKING, flagged=False,
            detail="model returned no links", raw_evidence={"response": parsed},
        )
    low = [str(k) for k, v in parsed.items() if _falsy(v)]
    if low:
        return SignalOutcome(
            signal_id=Signal.QUESTION_CLAUSE_LINKING, flagged=True,
            problematic_clauses={"low-confidence links": low},
            detail=f"{len(low)} link(s) marked low confidence",
            raw_evidence={"response": parsed},
        )
    return SignalOutcome(signal_id=Signal.QUESTION_CLAUSE_LINKING, flagged=False,
                         raw_evidence={"response": parsed})
