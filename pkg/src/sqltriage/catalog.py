"""Offline database catalog: schema, join graph, Steiner trees, value index."""

from __future__ import annotations

import hashlib
import json
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

from sqltriage.exec_probe import connect_readonly
from sqltriage.query_model import JoinPredicate
from sqltriage.steiner import UnreachableTerminals, steiner_tree_nodes

CATALOG_FORMAT_VERSION = 1

__all__ = [
    "BuildOptions", "ColumnMeta", "TableMeta", "DatabaseCatalog", "SteinerResult",
    "UnreachableTerminals", "build_catalog", "derived_join_pairs", "is_valid_join",
    "steiner_tables", "columns_containing_value", "tables_with_column_group",
    "save_catalog", "load_catalog", "load_supplemental_fks", "value_sidecar_path",
]


@dataclass(frozen=True)
class BuildOptions:
    """Caps and filters applied while building the catalog."""

    value_distinct_cap: int = 500_000
    value_truncate_chars: int = 256
    supplemental_fk_edges: tuple = ()  # ((child "t.c", parent "t.c"), ...)


@dataclass(frozen=True)
class ColumnMeta:
    name: str
    declared_type: str


@dataclass(frozen=True)
class TableMeta:
    name: str
    columns: tuple
    row_count: int

    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]


@dataclass
class SteinerResult:
    tables: frozenset
    edges: frozenset  # frozenset of (table, table) sorted tuples
    exact: bool


def _norm_col(ref: str) -> str:
    return ref.strip().lower()


def _normalize_value(raw: object, truncate: int) -> str:
    return str(raw)[:truncate].strip().lower()


@dataclass
class DatabaseCatalog:
    """Immutable schema summary plus join graph and value inverted index."""

    db_id: str
    tables: dict                  # lower name -> TableMeta
    primary_keys: dict            # lower table -> frozenset of lower column names
    fk_edges: tuple               # ((child "t.c", parent "t.c"), ...) lowercase
    derived_edges: tuple          # (("t.c", "t.c"), ...) lowercase, sorted pairs
    value_index: dict             # normalized value -> frozenset of "Table.column" (original case)
    signatures: dict              # lower table -> frozenset of lower column names
    build_options: BuildOptions
    build_report: dict = field(default_factory=dict)

    # -- derived views ----------------------------------------------------

    @property
    def join_graph_edges(self) -> frozenset:
        """Table-level undirected edges: FK edges plus derived pairs."""
        edges = set()
        for child, parent in self.fk_edges:
            tc, tp = child.split(".")[0], parent.split(".")[0]
            if tc != tp:
                edges.add(tuple(sorted((tc, tp))))
        for a, b in self.derived_edges:
            ta, tb = a.split(".")[0], b.split(".")[0]
            if ta != tb:
                edges.add(tuple(sorted((ta, tb))))
        return frozenset(edges)

    def table_name(self, name: str) -> str:
        """Original-case table name for a case-insensitive lookup."""
        meta = self.tables.get(name.lower())
        return meta.name if meta else name

    def has_table(self, name: str) -> bool:
        return name.lower() in self.tables

    def row_count(self, table: str) -> int:
        meta = self.tables.get(table.lower())
        return meta.row_count if meta else 0

    def tables_owning_column(self, column: str) -> list[str]:
        """Original-case names of tables whose schema includes the column."""
        needle = column.lower()
        return sorted(
            (meta.name for key, meta in self.tables.items() if needle in self.signatures[key]),
            key=str.lower,
        )

    def _valid_column_pairs(self) -> set:
        pairs = set()
        for child, parent in self.fk_edges:
            pairs.add(frozenset((child, parent)))
        for a, b in self.derived_edges:
            pairs.add(frozenset((a, b)))
        return pairs


def _sqlite_tables(conn: sqlite3.Connection) -> list[str]:
    rows = conn.execute(
        "SELECT name FROM sqlite_master WHERE type = 'table' "
        "AND name NOT LIKE 'sqlite_%' ORDER BY name"
    ).fetchall()
    return [r[0] for r in rows]


def _is_text_type(declared: str) -> bool:
    upper = declared.upper()
    return any(tag in upper for tag in ("CHAR", "CLOB", "TEXT"))


def _quote(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def build_catalog(db, options: BuildOptions | None = None,
                  db_id: str | None = None) -> DatabaseCatalog:
    """Introspect a SQLite database into an immutable catalog."""
    options = options or BuildOptions()
    if isinstance(db, sqlite3.Connection):
        conn, owned = db, False
        resolved_id = db_id or "database"
    else:
        path = Path(db)
        if not path.exists():
            raise FileNotFoundError(f"database not found: {path}")
        conn, owned = connect_readonly(path), True
        resolved_id = db_id or path.stem
    try:
        return _build(conn, options, resolved_id)
    finally:
        if owned:
            conn.close()


def _build(conn: sqlite3.Connection, options: BuildOptions, db_id: str) -> DatabaseCatalog:
    tables: dict[str, TableMeta] = {}
    primary_keys: dict[str, frozenset] = {}
    signatures: dict[str, frozenset] = {}
    fk_edges: set[tuple[str, str]] = set()
    value_index: dict[str, set] = {}
    skipped: list[str] = []

    names = _sqlite_tables(conn)
    for name in names:
        info = conn.execute(f"PRAGMA table_info({_quote(name)})").fetchall()
        columns = tuple(ColumnMeta(name=row[1], declared_type=row[2] or "") for row in info)
        pk_cols = frozenset(row[1].lower() for row in info if row[5])
        row_count = conn.execute(f"SELECT COUNT(*) FROM {_quote(name)}").fetchone()[0]
        key = name.lower()
        tables[key] = TableMeta(name=name, columns=columns, row_count=row_count)
        primary_keys[key] = pk_cols
        signatures[key] = frozenset(c.name.lower() for c in columns)

    for name in names:
        child = name.lower()
        for row in conn.execute(f"PRAGMA foreign_key_list({_quote(name)})").fetchall():
            parent_table = row[2].lower()
            from_col = row[3].lower()
            to_col = (row[4] or "").lower()
            if not to_col:
                pk = primary_keys.get(parent_table, frozenset())
                if len(pk) != 1:
                    continue
                to_col = next(iter(pk))
            if parent_table in tables:
                fk_edges.add((f"{child}.{from_col}", f"{parent_table}.{to_col}"))

    for child, parent in options.supplemental_fk_edges:
        fk_edges.add((_norm_col(child), _norm_col(parent)))

    for key, meta in tables.items():
        for col in meta.columns:
            if not _is_text_type(col.declared_type):
                continue
            qt, qc = _quote(meta.name), _quote(col.name)
            distinct = conn.execute(
                f"SELECT COUNT(DISTINCT {qc}) FROM {qt}"
            ).fetchone()[0]
            if distinct > options.value_distinct_cap:
                skipped.append(f"{meta.name}.{col.name}")
                continue
            ref = f"{meta.name}.{col.name}"
            for (raw,) in conn.execute(
                f"SELECT DISTINCT {qc} FROM {qt} WHERE {qc} IS NOT NULL"
            ):
                norm = _normalize_value(raw, options.value_truncate_chars)
                value_index.setdefault(norm, set()).add(ref)

    ordered_fks = tuple(sorted(fk_edges))
    return DatabaseCatalog(
        db_id=db_id,
        tables=tables,
        primary_keys=primary_keys,
        fk_edges=ordered_fks,
        derived_edges=_compute_derived_edges(ordered_fks),
        value_index={v: frozenset(refs) for v, refs in sorted(value_index.items())},
        signatures=signatures,
        build_options=options,
        build_report={"skipped_value_columns": sorted(skipped)},
    )


def _compute_derived_edges(fk_edges: tuple) -> tuple:
    """Pairs of FK children that point at the same parent PK column."""
    children_by_parent: dict[str, list] = {}
    for child, parent in fk_edges:
        children_by_parent.setdefault(parent, []).append(child)
    fk_pairs = {frozenset(e) for e in fk_edges}
    derived = set()
    for children in children_by_parent.values():
        uniq = sorted(set(children))
        for i in range(len(uniq)):
            for j in range(i + 1, len(uniq)):
                pair = (uniq[i], uniq[j])
                if frozenset(pair) not in fk_pairs:
                    derived.add(pair)
    return tuple(sorted(derived))


def derived_join_pairs(catalog: DatabaseCatalog) -> list:
    """Column pairs joinable because both reference the same parent key."""
    return list(catalog.derived_edges)


def is_valid_join(catalog: DatabaseCatalog, jp: JoinPredicate) -> bool:
    """True when the join predicate matches an FK edge or derived pair."""
    if not (jp.left.table and jp.right.table):
        return False
    left = f"{jp.left.table.lower()}.{jp.left.column.lower()}"
    right = f"{jp.right.table.lower()}.{jp.right.column.lower()}"
    return frozenset((left, right)) in catalog._valid_column_pairs()


def steiner_tables(catalog: DatabaseCatalog, terminals) -> SteinerResult:
    """Minimum-table connecting tree over the join graph."""
    lower_terminals = {t.lower() for t in terminals}
    unknown = sorted(t for t in lower_terminals if t not in catalog.tables)
    if unknown:
        raise ValueError(f"terminals are not catalog tables: {', '.join(unknown)}")
    nodes = frozenset(catalog.tables)
    edges = catalog.join_graph_edges
    exact = len(nodes) <= 20 and len(lower_terminals) <= 12
    tree_nodes = steiner_tree_nodes(
        nodes, edges, lower_terminals,
        exact_node_limit=20, exact_terminal_limit=12,
    )
    tree_edges = _spanning_tree_edges(tree_nodes, edges)
    return SteinerResult(
        tables=frozenset(catalog.table_name(t) for t in tree_nodes),
        edges=frozenset(
            tuple(sorted((catalog.table_name(a), catalog.table_name(b))))
            for a, b in tree_edges
        ),
        exact=exact,
    )


def _spanning_tree_edges(nodes: frozenset, all_edges: frozenset) -> set:
    """BFS spanning tree of the induced subgraph (nodes are known connected)."""
    if len(nodes) <= 1:
        return set()
    adj: dict[str, set] = {n: set() for n in nodes}
    for a, b in all_edges:
        if a in adj and b in adj:
            adj[a].add(b)
            adj[b].add(a)
    start = min(nodes)
    seen = {start}
    frontier = [start]
    tree = set()
    while frontier:
        current = frontier.pop()
        for nxt in sorted(adj[current]):
            if nxt not in seen:
                seen.add(nxt)
                tree.add(tuple(sorted((current, nxt))))
                frontier.append(nxt)
    return tree


def columns_containing_value(catalog: DatabaseCatalog, value: object) -> frozenset:
    """Exact-match inverted-index lookup after normalization."""
    norm = _normalize_value(value, catalog.build_options.value_truncate_chars)
    return catalog.value_index.get(norm, frozenset())


def tables_with_column_group(catalog: DatabaseCatalog, group, exclude: str) -> set:
    """Tables other than `exclude` whose columns include the whole group."""
    needle = {str(c).lower() for c in group}
    if not needle:
        raise ValueError("column group must be non-empty")
    skip = exclude.lower()
    return {
        catalog.tables[key].name
        for key, sig in catalog.signatures.items()
        if key != skip and needle <= sig
    }


# ---------------------------------------------------------------------------
# Persistence


def value_sidecar_path(json_path) -> Path:
    path = Path(json_path)
    return path.with_name(path.stem + ".values.tsv")


def catalog_document(catalog: DatabaseCatalog) -> dict:
    """The JSON-serializable view of a catalog (value index lives in the sidecar)."""
    return {
        "version": CATALOG_FORMAT_VERSION,
        "db_id": catalog.db_id,
        "tables": [
            {
                "name": meta.name,
                "row_count": meta.row_count,
                "columns": [
                    {"name": c.name, "type": c.declared_type} for c in meta.columns
                ],
            }
            for _, meta in sorted(catalog.tables.items())
        ],
        "primary_keys": {
            table: sorted(cols) for table, cols in sorted(catalog.primary_keys.items())
        },
        "fk_edges": [list(edge) for edge in catalog.fk_edges],
        "derived_edges": [list(edge) for edge in catalog.derived_edges],
        "signatures": {
            table: sorted(sig) for table, sig in sorted(catalog.signatures.items())
        },
        "build_options": {
            "value_distinct_cap": catalog.build_options.value_distinct_cap,
            "value_truncate_chars": catalog.build_options.value_truncate_chars,
            "supplemental_fk_edges": [
                list(edge) for edge in catalog.build_options.supplemental_fk_edges
            ],
        },
        "build_report": catalog.build_report,
    }


def catalog_digest(catalog: DatabaseCatalog) -> str:
    """Stable content hash over the catalog document and value index."""
    doc = catalog_document(catalog)
    doc["value_index"] = {
        value: sorted(refs) for value, refs in sorted(catalog.value_index.items())
    }
    payload = json.dumps(doc, sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


def save_catalog(catalog: DatabaseCatalog, json_path) -> None:
    """Write the catalog JSON and its value-index TSV sidecar."""
    path = Path(json_path)
    doc = catalog_document(catalog)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    lines = []
    for value, refs in sorted(catalog.value_index.items()):
        for ref in sorted(refs):
            lines.append(f"{value}\t{ref}")
    value_sidecar_path(path).write_text(
        "\n".join(lines) + ("\n" if lines else ""), encoding="utf-8"
    )


def load_catalog(json_path) -> DatabaseCatalog:
    """Read a catalog written by save_catalog."""
    path = Path(json_path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != CATALOG_FORMAT_VERSION:
        raise ValueError(f"unsupported catalog version: {doc.get('version')!r}")
    tables = {}
    for entry in doc["tables"]:
        meta = TableMeta(
            name=entry["name"],
            columns=tuple(
                ColumnMeta(name=c["name"], declared_type=c["type"])
                for c in entry["columns"]
            ),
            row_count=entry["row_count"],
        )
        tables[meta.name.lower()] = meta
    value_index: dict[str, set] = {}
    sidecar = value_sidecar_path(path)
    if sidecar.exists():
        for line in sidecar.read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            value, _, ref = line.partition("\t")
            value_index.setdefault(value, set()).add(ref)
    options = BuildOptions(
        value_distinct_cap=doc["build_options"]["value_distinct_cap"],
        value_truncate_chars=doc["build_options"]["value_truncate_chars"],
        supplemental_fk_edges=tuple(
            tuple(edge) for edge in doc["build_options"]["supplemental_fk_edges"]
        ),
    )
    return DatabaseCatalog(
        db_id=doc["db_id"],
        tables=tables,
        primary_keys={
            table: frozenset(cols) for table, cols in doc["primary_keys"].items()
        },
        fk_edges=tuple(tuple(edge) for edge in doc["fk_edges"]),
        derived_edges=tuple(tuple(edge) for edge in doc["derived_edges"]),
        value_index={v: frozenset(refs) for v, refs in sorted(value_index.items())},
        signatures={
            table: frozenset(sig) for table, sig in doc["signatures"].items()
        },
        build_options=options,
        build_report=doc.get("build_report", {}),
    )


def load_supplemental_fks(path) -> tuple:
    """Read a JSON list of {child: "table.column", parent: "table.column"}."""
    entries = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(entries, list):
        raise ValueError("supplemental FK file must contain a JSON list")
    edges = []
    for entry in entries:
        child, parent = entry["child"], entry["parent"]
        for ref in (child, parent):
            if "." not in ref:
                raise ValueError(f"FK endpoint must look like table.column: {ref!r}")
        edges.append((_norm_col(child), _norm_col(parent)))
    return tuple(edges)
