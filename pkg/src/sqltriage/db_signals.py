"""The nine database-grounded error signals.

Every signal maps a DetectionContext to a SignalOutcome and never raises:
execution problems downgrade to flagged=false with the failure recorded in
raw_evidence, so one broken probe cannot abort detection.
"""

from __future__ import annotations

import re

from sqltriage.catalog import (
    UnreachableTerminals,
    columns_containing_value,
    is_valid_join,
    steiner_tables,
    tables_with_column_group,
)
from sqltriage.exec_probe import ExecError, ExecLimits, classify_result, probe_predicate, run
from sqltriage.query_model import (
    Operator,
    groupby_without_aggregate,
    non_join_reference_tables,
    query_footprint,
    render_expr,
    scalar_subquery_filters,
    subquery_count,
)
from sqltriage.signals import DB_SIGNALS, DetectionContext, Signal, SignalOutcome

_TOKEN_RE = re.compile(r"[A-Za-z]+|\d+")
_CAMEL_RE = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")


def _name_tokens(name: str) -> frozenset:
    spaced = _CAMEL_RE.sub(" ", name.replace("_", " "))
    return frozenset(t.lower() for t in _TOKEN_RE.findall(spaced))


def semantic_score(question: str, column) -> float:
    """Fraction of the column's name tokens that appear in the question."""
    name = column if isinstance(column, str) else column.column
    if "." in name:
        name = name.rsplit(".", 1)[1]
    tokens = _name_tokens(name)
    if not tokens:
        return 0.0
    qtokens = _name_tokens(question)
    return len(tokens & qtokens) / len(tokens)


def _ok(signal: Signal, detail: str = "", **evidence) -> SignalOutcome:
    return SignalOutcome(signal_id=signal, flagged=False, detail=detail,
                         raw_evidence=dict(evidence))


def _flag(signal: Signal, clauses: dict, detail: str, **evidence) -> SignalOutcome:
    return SignalOutcome(signal_id=signal, flagged=True, problematic_clauses=clauses,
                         detail=detail, raw_evidence=dict(evidence))


def _downgrade(signal: Signal, failure: str, **evidence) -> SignalOutcome:
    return SignalOutcome(signal_id=signal, flagged=False,
                         detail=f"signal skipped: {failure}",
                         raw_evidence={"failure": failure, **evidence})


def sig_abnormal_result(ctx: DetectionContext) -> SignalOutcome:
    """Flag queries whose output is empty, all zeros, or all NULLs."""
    signal = Signal.ABNORMAL_RESULT
    try:
        result = run(ctx.db, ctx.sq.raw_sql, ctx.limits)
    except ExecError as exc:
        return _downgrade(signal, f"query execution failed: {exc}")
    flags = classify_result(result)
    notes = []
    if flags.empty:
        notes.append("empty result")
    notes.extend(f"all-zero column: {c}" for c in flags.all_zero_column)
    notes.extend(f"all-NULL column: {c}" for c in flags.all_null_column)
    if not notes:
        return _ok(signal, detail=f"output looks normal ({result.row_count} rows)",
                   row_count=result.row_count)
    return _flag(
        signal,
        {"abnormal output": notes},
        detail="query output is degenerate",
        row_count=result.row_count,
        truncated=result.truncated,
    )


def sig_empty_predicate(ctx: DetectionContext) -> SignalOutcome:
    """Flag literal predicates that match zero rows of their own table."""
    signal = Signal.EMPTY_PREDICATE
    empties: list[str] = []
    failures: list[str] = []
    counts: dict[str, int] = {}
    for pred in ctx.sq.literal_predicates:
        if pred.operator is Operator.IS:
            continue  # emptiness of a NULL test is usually intentional
        if not pred.column.table or not ctx.catalog.has_table(pred.column.table):
            failures.append(f"unresolved predicate column: {pred.column}")
            continue
        text = pred.text(ctx.sq.raw_sql)
        try:
            count = probe_predicate(ctx.db, pred, ctx.limits)
        except (ExecError, ValueError) as exc:
            failures.append(f"probe failed for {text!r}: {exc}")
            continue
        counts[text] = count
        if count == 0:
            empties.append(text)
    evidence = {"probe_counts": counts}
    if failures:
        evidence["probe_failures"] = failures
    if not empties:
        return _ok(signal, detail="no empty predicates", **evidence)
    return _flag(signal, {"empty predicates": empties},
                 detail="some predicates match no rows", **evidence)


def sig_incorrect_subquery_filter(ctx: DetectionContext) -> SignalOutcome:
    """Flag equality filters fed by subqueries that return multiple rows."""
    signal = Signal.INCORRECT_SUBQUERY_FILTER
    offenders: list[str] = []
    failures: list[str] = []
    probe_limits = ExecLimits(timeout_ms=ctx.limits.timeout_ms, max_rows=2)
    for sub in scalar_subquery_filters(ctx.sq):
        try:
            result = run(ctx.db, sub.sql_text, probe_limits)
        except ExecError as exc:
            failures.append(f"subquery failed: {exc}")
            continue
        if result.row_count > 1:
            offenders.append(sub.sql_text)
    evidence = {}
    if failures:
        evidence["probe_failures"] = failures
    if not offenders:
        return _ok(signal, detail="no multi-row scalar filters", **evidence)
    return _flag(signal, {"subqueries returning multiple rows": offenders},
                 detail="an equality filter consumes a multi-row subquery", **evidence)


def sig_incorrect_groupby(ctx: DetectionContext) -> SignalOutcome:
    """Flag GROUP BY used without any aggregate, a DISTINCT look-alike."""
    signal = Signal.INCORRECT_GROUPBY
    if not groupby_without_aggregate(ctx.sq):
        return _ok(signal, detail="grouping is aggregate-backed or absent")
    rendered = [render_expr(e) for e in ctx.sq.root.group_by]
    return _flag(signal, {"GROUP BY without aggregate": rendered},
                 detail="grouping with no aggregate anywhere in the query")


def sig_incorrect_join_predicate(ctx: DetectionContext) -> SignalOutcome:
    """Flag join predicates that match no FK edge or derived join pair."""
    signal = Signal.INCORRECT_JOIN_PREDICATE
    offenders = [
        jp.text(ctx.sq.raw_sql)
        for jp in ctx.sq.join_predicates
        if not is_valid_join(ctx.catalog, jp)
    ]
    if not offenders:
        return _ok(signal, detail="all join predicates are schema-supported",
                   join_count=len(ctx.sq.join_predicates))
    return _flag(signal, {"invalid join predicates": offenders},
                 detail="a join predicate matches no documented relationship",
                 join_count=len(ctx.sq.join_predicates))


def sig_suboptimal_join_tree(ctx: DetectionContext) -> SignalOutcome:
    """Flag queries that join more tables than a minimum connecting tree needs."""
    signal = Signal.SUBOPTIMAL_JOIN_TREE
    seen = set()
    used_tables = []
    for table, _alias in ctx.sq.from_tables:
        resolved = ctx.catalog.table_name(table)
        if resolved.lower() not in seen:
            seen.add(resolved.lower())
            used_tables.append(resolved)
    if len(used_tables) <= 1:
        return _ok(signal, detail="no join to optimize")
    unknown = [t for t in used_tables if not ctx.catalog.has_table(t)]
    if unknown:
        return _downgrade(signal, f"query references unknown tables: {', '.join(unknown)}")
    terminals = non_join_reference_tables(ctx.sq)
    terminals = {t for t in terminals if ctx.catalog.has_table(t)}
    if not terminals:
        return _ok(signal, detail="no semantically required tables found")
    try:
        tree = steiner_tables(ctx.catalog, terminals)
    except (UnreachableTerminals, ValueError) as exc:
        return _downgrade(signal, f"join graph cannot connect required tables: {exc}")
    optimal = sorted(tree.tables, key=str.lower)
    if len(used_tables) <= len(tree.tables):
        return _ok(signal, detail="join tree is already minimal",
                   used_tables=used_tables, optimal_tables=optimal, exact=tree.exact)
    return _flag(
        signal,
        {
            "tables used in the JOIN clauses": used_tables,
            "optimal set of tables to join": optimal,
        },
        detail="the join involves more tables than necessary",
        used_count=len(used_tables),
        optimal_count=len(tree.tables),
        exact=tree.exact,
    )


def sig_table_similarity(ctx: DetectionContext) -> SignalOutcome:
    """Flag used tables when another table carries the same column group."""
    signal = Signal.TABLE_SIMILARITY
    footprint = query_footprint(ctx.sq)
    pairs: list[str] = []
    evidence = {}
    for table in sorted(footprint.columns_by_table):
        if not ctx.catalog.has_table(table):
            continue
        group = footprint.columns_by_table[table]
        if len(group) < ctx.thresholds.min_group_size:
            continue
        alternatives = tables_with_column_group(ctx.catalog, group, exclude=table)
        # Precision guard: an empty table is never a credible alternative.
        alternatives = {a for a in alternatives if ctx.catalog.row_count(a) > 0}
        if alternatives:
            used = ctx.catalog.table_name(table)
            for alt in sorted(alternatives, key=str.lower):
                pairs.append(f"{used} -> {alt}")
            evidence[used] = {"columns": sorted(group, key=str.lower),
                              "alternatives": sorted(alternatives, key=str.lower)}
    if not pairs:
        return _ok(signal, detail="no confusable tables")
    return _flag(signal, {"similar table pairs": pairs},
                 detail="another table offers the same group of columns", **evidence)


def sig_unnecessary_subquery(ctx: DetectionContext) -> SignalOutcome:
    """Flag queries whose subquery count exceeds the threshold."""
    signal = Signal.UNNECESSARY_SUBQUERY
    count = subquery_count(ctx.sq)
    threshold = ctx.thresholds.subquery_threshold
    if count <= threshold:
        return _ok(signal, detail=f"{count} subqueries within threshold {threshold}",
                   subquery_count=count)
    texts = [s.sql_text for s in ctx.sq.subqueries]
    return _flag(signal, {"subqueries": texts},
                 detail=f"{count} subqueries exceed threshold {threshold}",
                 subquery_count=count, threshold=threshold)


def sig_value_ambiguity(ctx: DetectionContext) -> SignalOutcome:
    """Flag literal values that also live in a column closer to the question."""
    signal = Signal.VALUE_AMBIGUITY
    findings: list[str] = []
    evidence = {}
    for pred in ctx.sq.literal_predicates:
        if not pred.column.table:
            continue
        literals = pred.literal if isinstance(pred.literal, (list, tuple)) else [pred.literal]
        for value in literals:
            if not isinstance(value, str):
                continue
            used_ref = f"{ctx.catalog.table_name(pred.column.table)}.{pred.column.column}"
            used_score = semantic_score(ctx.question, pred.column.column)
            candidates = columns_containing_value(ctx.catalog, value)
            for alt in sorted(candidates):
                if alt.lower() == used_ref.lower():
                    continue
                alt_score = semantic_score(ctx.question, alt)
                if alt_score > used_score:
                    findings.append(
                        f"value '{value}' used in {used_ref}; "
                        f"{alt} matches the question better"
                    )
                    evidence[f"{value}@{used_ref}"] = {
                        "alternative": alt,
                        "used_score": round(used_score, 4),
                        "alternative_score": round(alt_score, 4),
                    }
    if not findings:
        return _ok(signal, detail="no ambiguous literal values")
    return _flag(signal, {"ambiguous values": findings},
                 detail="a literal value also appears in a better-matching column",
                 **evidence)


SIGNAL_FUNCTIONS = {
    Signal.ABNORMAL_RESULT: sig_abnormal_result,
    Signal.EMPTY_PREDICATE: sig_empty_predicate,
    Signal.INCORRECT_SUBQUERY_FILTER: sig_incorrect_subquery_filter,
    Signal.INCORRECT_GROUPBY: sig_incorrect_groupby,
    Signal.INCORRECT_JOIN_PREDICATE: sig_incorrect_join_predicate,
    Signal.SUBOPTIMAL_JOIN_TREE: sig_suboptimal_join_tree,
    Signal.TABLE_SIMILARITY: sig_table_similarity,
    Signal.UNNECESSARY_SUBQUERY: sig_unnecessary_subquery,
    Signal.VALUE_AMBIGUITY: sig_value_ambiguity,
}


def run_db_signals(ctx: DetectionContext, enabled=None) -> list:
    """Run the enabled database signals in canonical registry order."""
    if enabled is None:
        wanted = set(DB_SIGNALS)
    else:
        wanted = {s for s in enabled if s in SIGNAL_FUNCTIONS}
    return [SIGNAL_FUNCTIONS[s](ctx) for s in DB_SIGNALS if s in wanted]
