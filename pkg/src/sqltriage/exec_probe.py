"""Read-only SQL execution with resource limits and abnormality classification."""

from __future__ import annotations

import sqlite3
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from sqltriage.query_model import Operator, Predicate, render_ident, render_literal

READ_ONLY_LEADERS = {"SELECT", "WITH", "VALUES"}

# Opcode granularity for the interpreter progress hook used to enforce timeouts.
_PROGRESS_STEP = 2000


class ExecError(Exception):
    """Base class for execution failures; message carries the engine diagnostic."""


class QuerySyntaxError(ExecError):
    pass


class QueryTimeoutError(ExecError):
    pass


class QueryEngineError(ExecError):
    pass


@dataclass
class ExecLimits:
    """Resource caps for every live database call."""

    timeout_ms: int = 30000
    max_rows: int = 10000

    def __post_init__(self):
        if self.timeout_ms <= 0 or self.max_rows <= 0:
            raise ValueError("execution limits must be positive")


@dataclass
class ResultTable:
    columns: list
    rows: list
    row_count: int
    truncated: bool
    elapsed_ms: float

    def __post_init__(self):
        if any(len(row) != len(self.columns) for row in self.rows):
            raise ValueError("row width must match column count")


@dataclass
class AbnormalityFlags:
    empty: bool
    all_zero_column: list = field(default_factory=list)
    all_null_column: list = field(default_factory=list)

    @property
    def any(self) -> bool:
        return self.empty or bool(self.all_zero_column) or bool(self.all_null_column)


def connect_readonly(db_path) -> sqlite3.Connection:
    uri = f"file:{Path(db_path).as_posix()}?mode=ro"
    # cross-thread use is allowed; run() serializes access per connection
    return sqlite3.connect(uri, uri=True, check_same_thread=False)


_LOCK_REGISTRY: dict[int, threading.Lock] = {}
_REGISTRY_GUARD = threading.Lock()


def _connection_lock(conn: sqlite3.Connection) -> threading.Lock:
    with _REGISTRY_GUARD:
        return _LOCK_REGISTRY.setdefault(id(conn), threading.Lock())


def _as_connection(db) -> tuple[sqlite3.Connection, bool]:
    if isinstance(db, sqlite3.Connection):
        return db, False
    return connect_readonly(db), True


_SYNTAX_MARKERS = ("syntax error", "incomplete input", "unrecognized token")


def _classify_operational(exc: sqlite3.Error, timed_out: bool) -> ExecError:
    message = str(exc)
    if timed_out:
        return QueryTimeoutError(message or "query interrupted by timeout")
    lowered = message.lower()
    if any(marker in lowered for marker in _SYNTAX_MARKERS):
        return QuerySyntaxError(message)
    return QueryEngineError(message)


def run(db, sql: str, limits: ExecLimits | None = None) -> ResultTable:
    """Execute one read-only statement and collect up to max_rows + overflow probe."""
    limits = limits or ExecLimits()
    leader = sql.lstrip().split(None, 1)
    first = leader[0].upper().strip("(;") if leader else ""
    if first not in READ_ONLY_LEADERS:
        raise QuerySyntaxError(f"refusing non-SELECT statement (starts with {first or 'nothing'!r})")
    conn, owned = _as_connection(db)
    state = {"timed_out": False}
    deadline = None

    def on_progress():
        if time.monotonic() > deadline:
            state["timed_out"] = True
            return 1
        return 0

    try:
        # one statement at a time per connection; the clock starts after
        # the lock so a queued query gets its full timeout
        with _connection_lock(conn):
            deadline = time.monotonic() + limits.timeout_ms / 1000.0
            conn.set_progress_handler(on_progress, _PROGRESS_STEP)
            started = time.monotonic()
            try:
                cursor = conn.execute(sql)
                rows = cursor.fetchmany(limits.max_rows + 1)
                columns = [d[0] for d in cursor.description] if cursor.description else []
            finally:
                conn.set_progress_handler(None, 0)
    except sqlite3.Error as exc:
        raise _classify_operational(exc, state["timed_out"]) from exc
    finally:
        if owned:
            conn.close()
    elapsed_ms = (time.monotonic() - started) * 1000.0
    truncated = len(rows) > limits.max_rows
    if truncated:
        rows = rows[:limits.max_rows]
    return ResultTable(
        columns=columns,
        rows=[tuple(r) for r in rows],
        row_count=len(rows),
        truncated=truncated,
        elapsed_ms=elapsed_ms,
    )


def render_predicate_sql(pred: Predicate) -> str:
    """Rebuild the predicate as standalone SQL against its base table."""
    col = render_ident(pred.column.column)
    neg = "NOT " if pred.negated else ""
    if pred.operator is Operator.IN:
        items = ", ".join(render_literal(v) for v in pred.literal)
        return f"{col} {neg}IN ({items})"
    if pred.operator is Operator.BETWEEN:
        low, high = pred.literal
        return f"{col} {neg}BETWEEN {render_literal(low)} AND {render_literal(high)}"
    if pred.operator is Operator.IS:
        return f"{col} IS NOT NULL" if pred.negated else f"{col} IS NULL"
    if pred.operator is Operator.LIKE:
        return f"{col} {neg}LIKE {render_literal(pred.literal)}"
    return f"{col} {pred.operator.value} {render_literal(pred.literal)}"


def probe_predicate(db, pred: Predicate, limits: ExecLimits | None = None) -> int:
    """Count rows of the predicate's own table matching the predicate alone."""
    if not pred.column.table:
        raise ValueError(f"predicate column {pred.column.column!r} is not resolved to a table")
    table = render_ident(pred.column.table)
    sql = f"SELECT COUNT(*) FROM {table} WHERE {render_predicate_sql(pred)}"
    result = run(db, sql, limits)
    return int(result.rows[0][0])


def classify_result(rt: ResultTable) -> AbnormalityFlags:
    """Columns full of zeros or NULLs, and fully empty outputs."""
    if rt.row_count == 0:
        return AbnormalityFlags(empty=True)
    all_zero: list[str] = []
    all_null: list[str] = []
    for idx, name in enumerate(rt.columns):
        cells = [row[idx] for row in rt.rows]
        if all(cell is None for cell in cells):
            all_null.append(name)
        elif all(
            isinstance(cell, (int, float)) and not isinstance(cell, bool) and cell == 0
            for cell in cells
        ):
            all_zero.append(name)
    return AbnormalityFlags(empty=False, all_zero_column=all_zero, all_null_column=all_null)
