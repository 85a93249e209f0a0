"""Parse a SQL string into a structured clause model used by every error signal.

The supported dialect is single-statement SELECT queries with joins and
subqueries (no CTEs, no DDL/DML, no derived tables).  Queries outside the
subset never raise: the result carries parse_ok=False and a diagnostic so
callers can route them to execution-only signals.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

AGGREGATE_FUNCS = {"COUNT", "SUM", "AVG", "MIN", "MAX", "TOTAL", "GROUP_CONCAT"}

KEYWORDS = {
    "SELECT", "DISTINCT", "ALL", "FROM", "WHERE", "GROUP", "BY", "HAVING",
    "ORDER", "LIMIT", "OFFSET", "AS", "JOIN", "INNER", "LEFT", "RIGHT",
    "FULL", "OUTER", "CROSS", "ON", "AND", "OR", "NOT", "IN", "LIKE",
    "BETWEEN", "IS", "NULL", "ASC", "DESC", "CASE", "WHEN", "THEN", "ELSE",
    "END", "EXISTS", "UNION", "INTERSECT", "EXCEPT", "CAST",
}

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?")


class ParseFailure(Exception):
    """Internal parser abort; converted to parse_ok=False by parse()."""


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, QIDENT, STRING, NUMBER, OP, PUNCT, KEYWORD, EOF
    value: str
    start: int
    end: int


def tokenize(sql: str) -> list[Token]:
    tokens: list[Token] = []
    i, n = 0, len(sql)
    while i < n:
        ch = sql[i]
        if ch.isspace():
            i += 1
            continue
        if sql.startswith("--", i):
            j = sql.find("\n", i)
            i = n if j < 0 else j + 1
            continue
        if sql.startswith("/*", i):
            j = sql.find("*/", i + 2)
            if j < 0:
                raise ParseFailure(f"unterminated comment at offset {i}")
            i = j + 2
            continue
        if ch == "'":
            j = i + 1
            buf = []
            while True:
                if j >= n:
                    raise ParseFailure(f"unterminated string literal at offset {i}")
                if sql[j] == "'":
                    if j + 1 < n and sql[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(sql[j])
                j += 1
            tokens.append(Token("STRING", "".join(buf), i, j + 1))
            i = j + 1
            continue
        if ch in "`\"":
            j = sql.find(ch, i + 1)
            if j < 0:
                raise ParseFailure(f"unterminated quoted identifier at offset {i}")
            tokens.append(Token("QIDENT", sql[i + 1:j], i, j + 1))
            i = j + 1
            continue
        if ch.isdigit() or ch == ".":
            m = _NUMBER_RE.match(sql, i)
            if m:
                tokens.append(Token("NUMBER", m.group(), i, m.end()))
                i = m.end()
                continue
        m = _IDENT_RE.match(sql, i)
        if m:
            word = m.group()
            kind = "KEYWORD" if word.upper() in KEYWORDS else "IDENT"
            tokens.append(Token(kind, word, i, m.end()))
            i = m.end()
            continue
        for op in ("<>", "!=", "<=", ">=", "=", "<", ">"):
            if sql.startswith(op, i):
                tokens.append(Token("OP", "!=" if op == "<>" else op, i, i + len(op)))
                i += len(op)
                break
        else:
            if ch in "(),.;*+-/":
                tokens.append(Token("PUNCT", ch, i, i + 1))
                i += 1
            else:
                raise ParseFailure(f"unexpected character {ch!r} at offset {i}")
    tokens.append(Token("EOF", "", n, n))
    return tokens


# ---------------------------------------------------------------------------
# Expression and clause AST


@dataclass(frozen=True)
class ColumnRef:
    """A reference to a table column; table is the resolved base table name."""

    table: str | None
    column: str
    resolved: bool = True

    @property
    def key(self) -> tuple[str | None, str]:
        return (self.table.lower() if self.table else None, self.column.lower())

    def __str__(self) -> str:
        return f"{self.table}.{self.column}" if self.table else self.column


class Clause(str, Enum):
    SELECT = "SELECT"
    WHERE = "WHERE"
    HAVING = "HAVING"
    ON = "ON"
    GROUP_BY = "GROUP_BY"
    ORDER_BY = "ORDER_BY"


class Operator(str, Enum):
    EQ = "="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    LIKE = "LIKE"
    IN = "IN"
    IS = "IS"
    BETWEEN = "BETWEEN"


@dataclass(frozen=True)
class Predicate:
    """A comparison between a column and a literal value."""

    column: ColumnRef
    operator: Operator
    literal: object  # str | float | int | None | tuple (BETWEEN) | list (IN)
    clause: Clause
    span: tuple[int, int] = field(compare=False)
    negated: bool = False

    def text(self, raw_sql: str) -> str:
        return raw_sql[self.span[0]:self.span[1]]


@dataclass(frozen=True)
class JoinPredicate:
    """An equality between two distinct column references."""

    left: ColumnRef
    right: ColumnRef
    span: tuple[int, int] = field(compare=False)

    def text(self, raw_sql: str) -> str:
        return raw_sql[self.span[0]:self.span[1]]


class SubqueryPattern(str, Enum):
    SCALAR_EQUALITY_FILTER = "SCALAR_EQUALITY_FILTER"
    OTHER = "OTHER"


@dataclass(frozen=True)
class SubqueryRef:
    sql_text: str
    depth: int
    pattern: SubqueryPattern
    parent_clause: Clause


# Expression nodes.  Spans never participate in equality so that rendered and
# re-parsed trees compare structurally equal.


@dataclass(frozen=True)
class Column:
    qualifier: str | None
    name: str
    span: tuple[int, int] = field(compare=False)


@dataclass(frozen=True)
class Literal:
    value: object  # str | float | int | None
    span: tuple[int, int] = field(compare=False)


@dataclass(frozen=True)
class Star:
    qualifier: str | None = None


@dataclass(frozen=True)
class FuncCall:
    name: str  # uppercased
    args: tuple
    distinct: bool = False
    star: bool = False


@dataclass(frozen=True)
class Arith:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class CastExpr:
    expr: object
    type_name: str


@dataclass(frozen=True)
class Subquery:
    block: "SelectBlock"
    span: tuple[int, int] = field(compare=False)


@dataclass(frozen=True)
class Comparison:
    op: Operator
    left: object
    right: object
    span: tuple[int, int] = field(compare=False)
    negated: bool = False


@dataclass(frozen=True)
class InExpr:
    left: object
    items: tuple  # literals/exprs, or a single Subquery
    span: tuple[int, int] = field(compare=False)
    negated: bool = False


@dataclass(frozen=True)
class BetweenExpr:
    left: object
    low: object
    high: object
    span: tuple[int, int] = field(compare=False)
    negated: bool = False


@dataclass(frozen=True)
class IsNullExpr:
    left: object
    span: tuple[int, int] = field(compare=False)
    negated: bool = False


@dataclass(frozen=True)
class BoolOp:
    op: str  # AND | OR
    parts: tuple


@dataclass(frozen=True)
class NotExpr:
    inner: object


@dataclass(frozen=True)
class TableSource:
    table: str
    alias: str | None
    join_type: str  # FROM, INNER, LEFT, CROSS
    on: object | None


@dataclass(frozen=True)
class SelectItem:
    expr: object
    alias: str | None
    aggregate: bool  # expression contains an aggregate call outside subqueries

    @property
    def text(self) -> str:
        return render_expr(self.expr)


@dataclass(frozen=True)
class OrderItem:
    expr: object
    ascending: bool
    aggregate: bool

    @property
    def text(self) -> str:
        return render_expr(self.expr)


@dataclass(frozen=True)
class LimitSpec:
    count: object
    offset: object | None


@dataclass(frozen=True)
class SelectBlock:
    distinct: bool
    select_items: tuple
    from_sources: tuple
    where: object | None
    group_by: tuple
    having: object | None
    order_by: tuple
    limit: LimitSpec | None


@dataclass(frozen=True)
class Footprint:
    tables: frozenset
    columns_by_table: dict
    non_join_columns: frozenset
    literal_values: tuple


@dataclass
class StructuredQuery:
    raw_sql: str
    parse_ok: bool
    parse_error: str | None = None
    select_items: list = field(default_factory=list)
    from_tables: list = field(default_factory=list)  # (table, alias) pairs
    join_predicates: list = field(default_factory=list)
    literal_predicates: list = field(default_factory=list)
    group_by_columns: list = field(default_factory=list)
    order_by_items: list = field(default_factory=list)
    subqueries: list = field(default_factory=list)
    alias_map: dict = field(default_factory=dict)
    root: SelectBlock | None = None
    column_occurrences: list = field(default_factory=list)  # (ColumnRef, Clause, in_join)


class _Parser:
    def __init__(self, sql: str, tokens: list[Token]):
        self.sql = sql
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.tokens[min(self.pos + ahead, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "KEYWORD" and tok.value.upper() in words

    def expect_keyword(self, word: str) -> Token:
        tok = self.next()
        if tok.kind != "KEYWORD" or tok.value.upper() != word:
            raise ParseFailure(f"expected {word} at offset {tok.start}, found {tok.value!r}")
        return tok

    def accept_keyword(self, *words: str) -> Token | None:
        if self.at_keyword(*words):
            return self.next()
        return None

    def at_punct(self, ch: str) -> bool:
        tok = self.peek()
        return tok.kind == "PUNCT" and tok.value == ch

    def expect_punct(self, ch: str) -> Token:
        tok = self.next()
        if tok.kind != "PUNCT" or tok.value != ch:
            raise ParseFailure(f"expected {ch!r} at offset {tok.start}, found {tok.value!r}")
        return tok

    def accept_punct(self, ch: str) -> Token | None:
        if self.at_punct(ch):
            return self.next()
        return None

    # -- grammar --------------------------------------------------------

    def parse_statement(self) -> SelectBlock:
        block = self.parse_select()
        self.accept_punct(";")
        tok = self.peek()
        if tok.kind != "EOF":
            raise ParseFailure(f"trailing input at offset {tok.start}: {tok.value!r}")
        return block

    def parse_select(self) -> SelectBlock:
        self.expect_keyword("SELECT")
        distinct = bool(self.accept_keyword("DISTINCT"))
        self.accept_keyword("ALL")
        items = [self.parse_select_item()]
        while self.accept_punct(","):
            items.append(self.parse_select_item())
        sources: list[TableSource] = []
        if self.accept_keyword("FROM"):
            sources = self.parse_from()
        where = None
        if self.accept_keyword("WHERE"):
            where = self.parse_bool_expr()
        group_by: list = []
        if self.at_keyword("GROUP"):
            self.next()
            self.expect_keyword("BY")
            group_by.append(self.parse_value_expr())
            while self.accept_punct(","):
                group_by.append(self.parse_value_expr())
        having = None
        if self.accept_keyword("HAVING"):
            having = self.parse_bool_expr()
        order_by: list[OrderItem] = []
        if self.at_keyword("ORDER"):
            self.next()
            self.expect_keyword("BY")
            order_by.append(self.parse_order_item())
            while self.accept_punct(","):
                order_by.append(self.parse_order_item())
        limit = None
        if self.accept_keyword("LIMIT"):
            first = self.parse_value_expr()
            if self.accept_punct(","):
                # LIMIT offset, count
                count = self.parse_value_expr()
                limit = LimitSpec(count=count, offset=first)
            elif self.accept_keyword("OFFSET"):
                limit = LimitSpec(count=first, offset=self.parse_value_expr())
            else:
                limit = LimitSpec(count=first, offset=None)
        return SelectBlock(
            distinct=distinct,
            select_items=tuple(items),
            from_sources=tuple(sources),
            where=where,
            group_by=tuple(group_by),
            having=having,
            order_by=tuple(order_by),
            limit=limit,
        )

    def parse_select_item(self) -> SelectItem:
        if self.at_punct("*"):
            self.next()
            return SelectItem(expr=Star(), alias=None, aggregate=False)
        expr = self.parse_value_expr()
        alias = None
        if self.accept_keyword("AS"):
            alias = self.parse_name()
        elif self.peek().kind in ("IDENT", "QIDENT"):
            alias = self.parse_name()
        return SelectItem(expr=expr, alias=alias, aggregate=_has_aggregate(expr))

    def parse_order_item(self) -> OrderItem:
        expr = self.parse_value_expr()
        ascending = True
        if self.accept_keyword("DESC"):
            ascending = False
        else:
            self.accept_keyword("ASC")
        return OrderItem(expr=expr, ascending=ascending, aggregate=_has_aggregate(expr))

    def parse_name(self) -> str:
        tok = self.next()
        if tok.kind not in ("IDENT", "QIDENT"):
            raise ParseFailure(f"expected identifier at offset {tok.start}, found {tok.value!r}")
        return tok.value

    def parse_from(self) -> list[TableSource]:
        sources = [self.parse_table_source("FROM")]
        while True:
            if self.accept_punct(","):
                sources.append(self.parse_table_source("FROM"))
                continue
            join_type = None
            if self.at_keyword("JOIN"):
                self.next()
                join_type = "INNER"
            elif self.at_keyword("INNER"):
                self.next()
                self.expect_keyword("JOIN")
                join_type = "INNER"
            elif self.at_keyword("LEFT", "RIGHT", "FULL"):
                side = self.next().value.upper()
                self.accept_keyword("OUTER")
                self.expect_keyword("JOIN")
                join_type = side
            elif self.at_keyword("CROSS"):
                self.next()
                self.expect_keyword("JOIN")
                join_type = "CROSS"
            if join_type is None:
                break
            src = self.parse_table_source(join_type)
            if self.accept_keyword("ON"):
                src = TableSource(src.table, src.alias, src.join_type, self.parse_bool_expr())
            sources.append(src)
        return sources

    def parse_table_source(self, join_type: str) -> TableSource:
        if self.at_punct("("):
            raise ParseFailure(
                f"derived tables are not supported (offset {self.peek().start})"
            )
        table = self.parse_name()
        alias = None
        if self.accept_keyword("AS"):
            alias = self.parse_name()
        elif self.peek().kind in ("IDENT", "QIDENT"):
            alias = self.parse_name()
        return TableSource(table=table, alias=alias, join_type=join_type, on=None)

    # Boolean grammar: or_expr := and_expr (OR and_expr)*

    def parse_bool_expr(self) -> object:
        parts = [self.parse_and_expr()]
        while self.accept_keyword("OR"):
            parts.append(self.parse_and_expr())
        return parts[0] if len(parts) == 1 else BoolOp("OR", tuple(parts))

    def parse_and_expr(self) -> object:
        parts = [self.parse_not_expr()]
        while self.accept_keyword("AND"):
            parts.append(self.parse_not_expr())
        return parts[0] if len(parts) == 1 else BoolOp("AND", tuple(parts))

    def parse_not_expr(self) -> object:
        if self.accept_keyword("NOT"):
            return NotExpr(self.parse_not_expr())
        return self.parse_predicate()

    def parse_predicate(self) -> object:
        start = self.peek().start
        left = self.parse_value_expr()
        negated = bool(self.accept_keyword("NOT"))
        tok = self.peek()
        if tok.kind == "OP":
            op = Operator(self.next().value)
            if negated:
                raise ParseFailure(f"NOT before comparison operator at offset {tok.start}")
            right = self.parse_value_expr()
            end = self.tokens[self.pos - 1].end
            return Comparison(op=op, left=left, right=right, span=(start, end))
        if self.at_keyword("LIKE"):
            self.next()
            right = self.parse_value_expr()
            end = self.tokens[self.pos - 1].end
            return Comparison(op=Operator.LIKE, left=left, right=right,
                              span=(start, end), negated=negated)
        if self.at_keyword("IN"):
            self.next()
            self.expect_punct("(")
            items: list = []
            if self.at_keyword("SELECT"):
                sub_start = self.tokens[self.pos].start
                block = self.parse_select()
                sub_end = self.tokens[self.pos - 1].end
                items.append(Subquery(block=block, span=(sub_start, sub_end)))
            else:
                items.append(self.parse_value_expr())
                while self.accept_punct(","):
                    items.append(self.parse_value_expr())
            self.expect_punct(")")
            end = self.tokens[self.pos - 1].end
            return InExpr(left=left, items=tuple(items), span=(start, end), negated=negated)
        if self.at_keyword("BETWEEN"):
            self.next()
            low = self.parse_value_expr()
            self.expect_keyword("AND")
            high = self.parse_value_expr()
            end = self.tokens[self.pos - 1].end
            return BetweenExpr(left=left, low=low, high=high, span=(start, end), negated=negated)
        if self.at_keyword("IS"):
            self.next()
            is_negated = bool(self.accept_keyword("NOT"))
            self.expect_keyword("NULL")
            end = self.tokens[self.pos - 1].end
            return IsNullExpr(left=left, span=(start, end), negated=is_negated)
        if negated:
            raise ParseFailure(f"dangling NOT at offset {tok.start}")
        return left

    # Value grammar: additive over multiplicative over primary.

    def parse_value_expr(self) -> object:
        left = self.parse_term()
        while self.at_punct("+") or self.at_punct("-"):
            op = self.next().value
            left = Arith(op=op, left=left, right=self.parse_term())
        return left

    def parse_term(self) -> object:
        left = self.parse_primary()
        while self.at_punct("*") or self.at_punct("/"):
            op = self.next().value
            left = Arith(op=op, left=left, right=self.parse_primary())
        return left

    def parse_primary(self) -> object:
        tok = self.peek()
        if tok.kind == "PUNCT" and tok.value == "(":
            self.next()
            if self.at_keyword("SELECT"):
                sub_start = tok.start
                block = self.parse_select()
                close = self.expect_punct(")")
                return Subquery(block=block, span=(sub_start, close.end))
            inner = self.parse_bool_expr()
            self.expect_punct(")")
            return inner
        if tok.kind == "PUNCT" and tok.value == "-":
            self.next()
            inner = self.parse_primary()
            if isinstance(inner, Literal) and isinstance(inner.value, (int, float)):
                return Literal(value=-inner.value, span=(tok.start, inner.span[1]))
            return Arith(op="-", left=Literal(0, span=(tok.start, tok.start)), right=inner)
        if tok.kind == "STRING":
            self.next()
            return Literal(value=tok.value, span=(tok.start, tok.end))
        if tok.kind == "NUMBER":
            self.next()
            text = tok.value
            value = float(text) if ("." in text or "e" in text or "E" in text) else int(text)
            return Literal(value=value, span=(tok.start, tok.end))
        if tok.kind == "KEYWORD" and tok.value.upper() == "NULL":
            self.next()
            return Literal(value=None, span=(tok.start, tok.end))
        if tok.kind == "KEYWORD" and tok.value.upper() == "CAST":
            self.next()
            self.expect_punct("(")
            inner = self.parse_value_expr()
            self.expect_keyword("AS")
            type_name = self.parse_name().upper()
            self.expect_punct(")")
            return CastExpr(expr=inner, type_name=type_name)
        if tok.kind in ("IDENT", "QIDENT"):
            return self.parse_column_or_func()
        raise ParseFailure(f"unexpected token {tok.value!r} at offset {tok.start}")

    def parse_column_or_func(self) -> object:
        tok = self.next()
        name = tok.value
        if self.at_punct("(") and tok.kind == "IDENT":
            self.next()
            func = name.upper()
            distinct = bool(self.accept_keyword("DISTINCT"))
            if self.at_punct("*"):
                self.next()
                self.expect_punct(")")
                return FuncCall(name=func, args=(), distinct=distinct, star=True)
            args: list = []
            if not self.at_punct(")"):
                args.append(self.parse_value_expr())
                while self.accept_punct(","):
                    args.append(self.parse_value_expr())
            self.expect_punct(")")
            return FuncCall(name=func, args=tuple(args), distinct=distinct)
        if self.at_punct("."):
            self.next()
            col = self.next()
            if col.kind not in ("IDENT", "QIDENT"):
                raise ParseFailure(f"expected column name at offset {col.start}")
            return Column(qualifier=name, name=col.value, span=(tok.start, col.end))
        return Column(qualifier=None, name=name, span=(tok.start, tok.end))


def _has_aggregate(expr: object) -> bool:
    """True when expr contains an aggregate call outside any nested subquery."""
    if isinstance(expr, FuncCall):
        if expr.name in AGGREGATE_FUNCS:
            return True
        return any(_has_aggregate(a) for a in expr.args)
    if isinstance(expr, Arith):
        return _has_aggregate(expr.left) or _has_aggregate(expr.right)
    if isinstance(expr, CastExpr):
        return _has_aggregate(expr.expr)
    return False


# ---------------------------------------------------------------------------
# Clause extraction


class _Extractor:
    def __init__(self, sql: str, catalog=None):
        self.sql = sql
        self.catalog = catalog
        self.from_tables: list[tuple[str, str | None]] = []
        self.join_predicates: list[JoinPredicate] = []
        self.literal_predicates: list[Predicate] = []
        self.subqueries: list[tuple[int, SubqueryRef]] = []
        self.alias_map: dict[str, str] = {}
        self.occurrences: list[tuple[ColumnRef, Clause, bool]] = []

    def run(self, root: SelectBlock) -> None:
        self.walk_block(root, depth=0, scopes=[])

    def block_scope(self, block: SelectBlock) -> dict[str, str]:
        scope: dict[str, str] = {}
        for src in block.from_sources:
            scope[src.table.lower()] = src.table
            if src.alias:
                scope[src.alias.lower()] = src.table
        return scope

    def resolve(self, col: Column, scopes: list[dict[str, str]]) -> ColumnRef:
        if col.qualifier:
            q = col.qualifier.lower()
            for scope in reversed(scopes):
                if q in scope:
                    return ColumnRef(table=scope[q], column=col.name)
            return ColumnRef(table=None, column=col.name, resolved=False)
        local = scopes[-1] if scopes else {}
        local_tables = sorted({t for t in local.values()}, key=str.lower)
        if len(local_tables) == 1:
            return ColumnRef(table=local_tables[0], column=col.name)
        if self.catalog is not None:
            owners = self.catalog.tables_owning_column(col.name)
            visible = {t.lower() for scope in scopes for t in scope.values()}
            owners = [t for t in owners if t.lower() in visible]
            if len(owners) == 1:
                return ColumnRef(table=owners[0], column=col.name)
        return ColumnRef(table=None, column=col.name, resolved=False)

    def walk_block(self, block: SelectBlock, depth: int, scopes: list[dict[str, str]]) -> None:
        scope = self.block_scope(block)
        scopes = scopes + [scope]
        for src in block.from_sources:
            self.from_tables.append((src.table, src.alias))
            key = (src.alias or src.table).lower()
            self.alias_map.setdefault(key, src.table)
        for item in block.select_items:
            self.walk_value(item.expr, Clause.SELECT, depth, scopes)
        for src in block.from_sources:
            if src.on is not None:
                self.walk_condition(src.on, Clause.ON, depth, scopes)
        if block.where is not None:
            self.walk_condition(block.where, Clause.WHERE, depth, scopes)
        for expr in block.group_by:
            self.walk_value(expr, Clause.GROUP_BY, depth, scopes)
        if block.having is not None:
            self.walk_condition(block.having, Clause.HAVING, depth, scopes)
        for item in block.order_by:
            self.walk_value(item.expr, Clause.ORDER_BY, depth, scopes)
        if block.limit is not None:
            for part in (block.limit.count, block.limit.offset):
                if part is not None:
                    self.walk_value(part, Clause.SELECT, depth, scopes)

    def note_subquery(self, sub: Subquery, depth: int, clause: Clause,
                      pattern: SubqueryPattern, scopes: list[dict[str, str]]) -> None:
        ref = SubqueryRef(
            sql_text=self.sql[sub.span[0] + 1:sub.span[1] - 1].strip(),
            depth=depth + 1,
            pattern=pattern,
            parent_clause=clause,
        )
        self.subqueries.append((sub.span[0], ref))
        self.walk_block(sub.block, depth + 1, scopes)

    def walk_value(self, expr: object, clause: Clause, depth: int,
                   scopes: list[dict[str, str]], in_join: bool = False) -> None:
        if isinstance(expr, Column):
            self.occurrences.append((self.resolve(expr, scopes), clause, in_join))
        elif isinstance(expr, FuncCall):
            for a in expr.args:
                self.walk_value(a, clause, depth, scopes, in_join)
        elif isinstance(expr, Arith):
            self.walk_value(expr.left, clause, depth, scopes, in_join)
            self.walk_value(expr.right, clause, depth, scopes, in_join)
        elif isinstance(expr, CastExpr):
            self.walk_value(expr.expr, clause, depth, scopes, in_join)
        elif isinstance(expr, Subquery):
            self.note_subquery(expr, depth, clause, SubqueryPattern.OTHER, scopes)
        elif isinstance(expr, (Comparison, InExpr, BetweenExpr, IsNullExpr, BoolOp, NotExpr)):
            self.walk_condition(expr, clause, depth, scopes)

    def walk_condition(self, expr: object, clause: Clause, depth: int,
                       scopes: list[dict[str, str]]) -> None:
        if isinstance(expr, BoolOp):
            for part in expr.parts:
                self.walk_condition(part, clause, depth, scopes)
            return
        if isinstance(expr, NotExpr):
            self.walk_condition(expr.inner, clause, depth, scopes)
            return
        if isinstance(expr, Comparison):
            self.classify_comparison(expr, clause, depth, scopes)
            return
        if isinstance(expr, InExpr):
            self.classify_in(expr, clause, depth, scopes)
            return
        if isinstance(expr, BetweenExpr):
            self.classify_between(expr, clause, depth, scopes)
            return
        if isinstance(expr, IsNullExpr):
            self.classify_is_null(expr, clause, depth, scopes)
            return
        self.walk_value(expr, clause, depth, scopes)

    def classify_comparison(self, cmp: Comparison, clause: Clause, depth: int,
                            scopes: list[dict[str, str]]) -> None:
        left, right = cmp.left, cmp.right
        if isinstance(left, Column) and isinstance(right, Column):
            lref = self.resolve(left, scopes)
            rref = self.resolve(right, scopes)
            if cmp.op is Operator.EQ and not cmp.negated and lref.key != rref.key:
                self.occurrences.append((lref, clause, True))
                self.occurrences.append((rref, clause, True))
                self.join_predicates.append(JoinPredicate(left=lref, right=rref, span=cmp.span))
            else:
                # Degenerate (t.a = t.a) or non-equality column pairs are kept
                # only as plain column occurrences.
                self.occurrences.append((lref, clause, False))
                self.occurrences.append((rref, clause, False))
            return
        if isinstance(left, Literal) and isinstance(right, Column):
            left, right = right, left
        if isinstance(left, Column) and isinstance(right, Literal):
            ref = self.resolve(left, scopes)
            self.occurrences.append((ref, clause, False))
            self.literal_predicates.append(Predicate(
                column=ref,
                operator=cmp.op,
                literal=right.value,
                clause=clause,
                span=cmp.span,
                negated=cmp.negated,
            ))
            return
        if isinstance(right, Subquery) and cmp.op is Operator.EQ and isinstance(left, Column):
            self.occurrences.append((self.resolve(left, scopes), clause, False))
            self.note_subquery(right, depth, clause,
                               SubqueryPattern.SCALAR_EQUALITY_FILTER, scopes)
            return
        # General case: walk both sides for occurrences and nested subqueries.
        self.walk_value(left, clause, depth, scopes)
        self.walk_value(right, clause, depth, scopes)

    def classify_in(self, expr: InExpr, clause: Clause, depth: int,
                    scopes: list[dict[str, str]]) -> None:
        items = expr.items
        if isinstance(expr.left, Column):
            ref = self.resolve(expr.left, scopes)
            self.occurrences.append((ref, clause, False))
            if all(isinstance(i, Literal) for i in items):
                self.literal_predicates.append(Predicate(
                    column=ref,
                    operator=Operator.IN,
                    literal=[i.value for i in items],
                    clause=clause,
                    span=expr.span,
                    negated=expr.negated,
                ))
                return
        else:
            self.walk_value(expr.left, clause, depth, scopes)
        for item in items:
            if isinstance(item, Subquery):
                self.note_subquery(item, depth, clause, SubqueryPattern.OTHER, scopes)
            else:
                self.walk_value(item, clause, depth, scopes)

    def classify_between(self, expr: BetweenExpr, clause: Clause, depth: int,
                         scopes: list[dict[str, str]]) -> None:
        if (isinstance(expr.left, Column) and isinstance(expr.low, Literal)
                and isinstance(expr.high, Literal)):
            ref = self.resolve(expr.left, scopes)
            self.occurrences.append((ref, clause, False))
            self.literal_predicates.append(Predicate(
                column=ref,
                operator=Operator.BETWEEN,
                literal=(expr.low.value, expr.high.value),
                clause=clause,
                span=expr.span,
                negated=expr.negated,
            ))
            return
        for part in (expr.left, expr.low, expr.high):
            self.walk_value(part, clause, depth, scopes)

    def classify_is_null(self, expr: IsNullExpr, clause: Clause, depth: int,
                         scopes: list[dict[str, str]]) -> None:
        if isinstance(expr.left, Column):
            ref = self.resolve(expr.left, scopes)
            self.occurrences.append((ref, clause, False))
            self.literal_predicates.append(Predicate(
                column=ref,
                operator=Operator.IS,
                literal=None,
                clause=clause,
                span=expr.span,
                negated=expr.negated,
            ))
            return
        self.walk_value(expr.left, clause, depth, scopes)


def parse(sql: str, catalog=None) -> StructuredQuery:
    """Parse sql into a StructuredQuery.  Never raises: failures are encoded."""
    if not sql or not sql.strip():
        return StructuredQuery(raw_sql=sql, parse_ok=False, parse_error="empty SQL text")
    try:
        tokens = tokenize(sql)
        parser = _Parser(sql, tokens)
        root = parser.parse_statement()
    except ParseFailure as exc:
        return StructuredQuery(raw_sql=sql, parse_ok=False, parse_error=str(exc))
    ex = _Extractor(sql, catalog=catalog)
    ex.run(root)
    ex.subqueries.sort(key=lambda pair: pair[0])
    return StructuredQuery(
        raw_sql=sql,
        parse_ok=True,
        select_items=list(root.select_items),
        from_tables=ex.from_tables,
        join_predicates=ex.join_predicates,
        literal_predicates=ex.literal_predicates,
        group_by_columns=_group_by_refs(root, ex),
        order_by_items=list(root.order_by),
        subqueries=[ref for _, ref in ex.subqueries],
        alias_map=ex.alias_map,
        root=root,
        column_occurrences=ex.occurrences,
    )


def _group_by_refs(root: SelectBlock, ex: _Extractor) -> list[ColumnRef]:
    scope = ex.block_scope(root)
    refs = []
    for expr in root.group_by:
        if isinstance(expr, Column):
            refs.append(ex.resolve(expr, [scope]))
    return refs


# ---------------------------------------------------------------------------
# Targeted extraction operations


def literal_predicates(sq: StructuredQuery) -> list[Predicate]:
    """Column-vs-literal comparisons only; join predicates are excluded."""
    return list(sq.literal_predicates)


def scalar_subquery_filters(sq: StructuredQuery) -> list[SubqueryRef]:
    return [s for s in sq.subqueries if s.pattern is SubqueryPattern.SCALAR_EQUALITY_FILTER]


def subquery_count(sq: StructuredQuery) -> int:
    return len(sq.subqueries)


def groupby_without_aggregate(sq: StructuredQuery) -> bool:
    """True when GROUP BY is used as a DISTINCT substitute.

    A query is flagged when it has a non-empty GROUP BY and no aggregate in
    the SELECT list or HAVING clause, and no ORDER BY aggregate that adds
    information beyond the grouping (an ORDER BY aggregate is informative
    when it has no column arguments, e.g. COUNT(*), or references a column
    outside the group-by list).
    """
    if not sq.parse_ok or sq.root is None or not sq.group_by_columns:
        return False
    if any(item.aggregate for item in sq.root.select_items):
        return False
    if sq.root.having is not None and _condition_has_aggregate(sq.root.having):
        return False
    group_keys = {ref.key for ref in sq.group_by_columns}
    for item in sq.root.order_by:
        if not item.aggregate:
            continue
        cols = _expr_columns(item.expr)
        if not cols:
            return False
        resolved = [_resolve_outer(sq, col) for col in cols]
        if any(ref.key not in group_keys for ref in resolved):
            return False
    return True


def _condition_has_aggregate(expr: object) -> bool:
    if isinstance(expr, BoolOp):
        return any(_condition_has_aggregate(p) for p in expr.parts)
    if isinstance(expr, NotExpr):
        return _condition_has_aggregate(expr.inner)
    if isinstance(expr, Comparison):
        return _has_aggregate(expr.left) or _has_aggregate(expr.right)
    if isinstance(expr, InExpr):
        return _has_aggregate(expr.left)
    if isinstance(expr, BetweenExpr):
        return any(_has_aggregate(e) for e in (expr.left, expr.low, expr.high))
    if isinstance(expr, IsNullExpr):
        return _has_aggregate(expr.left)
    return _has_aggregate(expr)


def _expr_columns(expr: object) -> list[Column]:
    if isinstance(expr, Column):
        return [expr]
    if isinstance(expr, FuncCall):
        return [c for a in expr.args for c in _expr_columns(a)]
    if isinstance(expr, Arith):
        return _expr_columns(expr.left) + _expr_columns(expr.right)
    if isinstance(expr, CastExpr):
        return _expr_columns(expr.expr)
    return []


def _resolve_outer(sq: StructuredQuery, col: Column) -> ColumnRef:
    ex = _Extractor(sq.raw_sql)
    scope = ex.block_scope(sq.root)
    return ex.resolve(col, [scope])


def query_footprint(sq: StructuredQuery) -> Footprint:
    """Tables, used columns, non-join columns and literal values of a query."""
    tables = frozenset(t.lower() for t, _ in sq.from_tables)
    columns_by_table: dict[str, set[str]] = {}
    join_keys = set()
    for jp in sq.join_predicates:
        join_keys.add(jp.left.key)
        join_keys.add(jp.right.key)
    non_join = set()
    for ref, _clause, _in_join in sq.column_occurrences:
        if ref.table:
            columns_by_table.setdefault(ref.table.lower(), set()).add(ref.column)
        if ref.resolved and ref.key not in join_keys:
            non_join.add(ref.key)
    values: list = []
    for pred in sq.literal_predicates:
        lit = pred.literal
        if isinstance(lit, (list, tuple)):
            values.extend(v for v in lit if v is not None)
        elif lit is not None:
            values.append(lit)
    return Footprint(
        tables=tables,
        columns_by_table=columns_by_table,
        non_join_columns=frozenset(non_join),
        literal_values=tuple(values),
    )


def non_join_reference_tables(sq: StructuredQuery) -> set[str]:
    """Tables with at least one column occurrence outside join predicates.

    These are the tables the query semantically needs (selected columns,
    filters, grouping); pure connector tables never appear here.
    """
    out = set()
    for ref, _clause, in_join in sq.column_occurrences:
        if ref.table and not in_join:
            out.add(ref.table.lower())
    return out


# ---------------------------------------------------------------------------
# Rendering


def _needs_quotes(name: str) -> bool:
    return not _IDENT_RE.fullmatch(name) or name.upper() in KEYWORDS


def render_ident(name: str) -> str:
    return f"`{name}`" if _needs_quotes(name) else name


def render_literal(value: object) -> str:
    if value is None:
        return "NULL"
    if isinstance(value, str):
        escaped = value.replace("'", "''")
        return f"'{escaped}'"
    if isinstance(value, float) and value == int(value) and abs(value) < 1e15:
        return repr(value)
    return repr(value)


def render_expr(expr: object) -> str:
    if isinstance(expr, Column):
        if expr.qualifier:
            return f"{render_ident(expr.qualifier)}.{render_ident(expr.name)}"
        return render_ident(expr.name)
    if isinstance(expr, Literal):
        return render_literal(expr.value)
    if isinstance(expr, Star):
        return "*"
    if isinstance(expr, FuncCall):
        if expr.star:
            return f"{expr.name}(*)"
        inner = ", ".join(render_expr(a) for a in expr.args)
        prefix = "DISTINCT " if expr.distinct else ""
        return f"{expr.name}({prefix}{inner})"
    if isinstance(expr, Arith):
        return f"{render_expr(expr.left)} {expr.op} {render_expr(expr.right)}"
    if isinstance(expr, CastExpr):
        return f"CAST({render_expr(expr.expr)} AS {expr.type_name})"
    if isinstance(expr, Subquery):
        return f"({render_block(expr.block)})"
    if isinstance(expr, Comparison):
        op = expr.op.value
        if expr.op is Operator.LIKE and expr.negated:
            op = "NOT LIKE"
        return f"{render_expr(expr.left)} {op} {render_expr(expr.right)}"
    if isinstance(expr, InExpr):
        items = ", ".join(render_expr(i) if not isinstance(i, Subquery)
                          else render_block(i.block) for i in expr.items)
        neg = "NOT " if expr.negated else ""
        return f"{render_expr(expr.left)} {neg}IN ({items})"
    if isinstance(expr, BetweenExpr):
        neg = "NOT " if expr.negated else ""
        return (f"{render_expr(expr.left)} {neg}BETWEEN "
                f"{render_expr(expr.low)} AND {render_expr(expr.high)}")
    if isinstance(expr, IsNullExpr):
        tail = "IS NOT NULL" if expr.negated else "IS NULL"
        return f"{render_expr(expr.left)} {tail}"
    if isinstance(expr, BoolOp):
        sep = f" {expr.op} "
        return sep.join(
            f"({render_expr(p)})" if isinstance(p, BoolOp) and p.op != expr.op
            else render_expr(p)
            for p in expr.parts
        )
    if isinstance(expr, NotExpr):
        return f"NOT ({render_expr(expr.inner)})"
    raise TypeError(f"cannot render expression {expr!r}")


def render_block(block: SelectBlock) -> str:
    parts = ["SELECT"]
    if block.distinct:
        parts.append("DISTINCT")
    items = []
    for item in block.select_items:
        text = render_expr(item.expr)
        if item.alias:
            text += f" AS {render_ident(item.alias)}"
        items.append(text)
    parts.append(", ".join(items))
    for idx, src in enumerate(block.from_sources):
        if idx == 0:
            parts.append("FROM")
        elif src.join_type == "FROM":
            parts[-1] += ","
        else:
            parts.append("CROSS JOIN" if src.join_type == "CROSS"
                         else f"{src.join_type} JOIN")
        ref = render_ident(src.table)
        if src.alias:
            ref += f" AS {render_ident(src.alias)}"
        parts.append(ref)
        if src.on is not None:
            parts.append("ON")
            parts.append(render_expr(src.on))
    if block.where is not None:
        parts.append("WHERE")
        parts.append(render_expr(block.where))
    if block.group_by:
        parts.append("GROUP BY")
        parts.append(", ".join(render_expr(e) for e in block.group_by))
    if block.having is not None:
        parts.append("HAVING")
        parts.append(render_expr(block.having))
    if block.order_by:
        parts.append("ORDER BY")
        parts.append(", ".join(
            render_expr(i.expr) + ("" if i.ascending else " DESC")
            for i in block.order_by
        ))
    if block.limit is not None:
        parts.append("LIMIT")
        parts.append(render_expr(block.limit.count))
        if block.limit.offset is not None:
            parts.append("OFFSET")
            parts.append(render_expr(block.limit.offset))
    return " ".join(parts)


def render(sq: StructuredQuery) -> str:
    """Render the parsed model back to SQL text (supported subset only)."""
    if not sq.parse_ok or sq.root is None:
        raise ValueError("cannot render a query that failed to parse")
    return render_block(sq.root) + ";"
