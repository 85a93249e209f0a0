"""Catalog tests: schema capture, join graph, value index, idempotence."""

from __future__ import annotations

import sqlite3
import string

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from sqltriage.catalog import (
    BuildOptions,
    build_catalog,
    catalog_digest,
    columns_containing_value,
    derived_join_pairs,
    is_valid_join,
    load_catalog,
    save_catalog,
    steiner_tables,
    tables_with_column_group,
)
from sqltriage.query_model import parse


def test_financial_tables_and_fks(catalogs):
    cat = catalogs["financial"]
    assert set(cat.tables) == {"district", "client", "account", "disp"}
    fk_tables = {(c.split(".")[0], p.split(".")[0]) for c, p in cat.fk_edges}
    assert ("client", "district") in fk_tables
    assert ("disp", "client") in fk_tables
    assert ("disp", "account") in fk_tables
    assert ("account", "district") in fk_tables


def test_derived_edges_link_shared_parents(catalogs):
    # client.district_id and account.district_id both reference district:
    # they form a derived joinable pair
    cat = catalogs["financial"]
    pairs = {frozenset(p) for p in derived_join_pairs(cat)}
    assert frozenset({"client.district_id", "account.district_id"}) in pairs


def test_join_graph_edges(catalogs):
    edges = catalogs["financial"].join_graph_edges
    assert ("client", "district") in edges
    assert ("account", "client") in edges  # derived via shared parent


def test_is_valid_join(catalogs):
    cat = catalogs["financial"]
    good = parse("SELECT 1 FROM client c JOIN district d "
                 "ON c.district_id = d.district_id;").join_predicates[0]
    bad = parse("SELECT 1 FROM client c JOIN account a "
                "ON c.client_id = a.account_id;").join_predicates[0]
    assert is_valid_join(cat, good)
    assert not is_valid_join(cat, bad)


def test_steiner_tables_uses_join_graph(catalogs):
    res = steiner_tables(catalogs["financial"], ["client", "district"])
    assert res.tables == frozenset({"client", "district"})


def test_value_index_normalizes_case(catalogs):
    cat = catalogs["financial"]
    cols = columns_containing_value(cat, "JESENIK")
    assert cols == frozenset({"district.a2"})


def test_value_index_across_tables(catalogs):
    cat = catalogs["card_games"]
    cols = columns_containing_value(cat, "Phyrexian")
    assert cols == frozenset({"cards.watermark", "foreign_data.language"})


def test_tables_with_column_group(catalogs):
    cat = catalogs["formula_1"]
    alts = tables_with_column_group(
        cat, {"raceid", "driverid", "points"}, exclude="results")
    assert "driverStandings" in alts


def test_row_counts(catalogs):
    cat = catalogs["formula_1"]
    assert cat.row_count("results") == 0
    assert cat.row_count("driverStandings") > 0


def test_save_load_round_trip(tmp_path, catalogs):
    cat = catalogs["toxicology"]
    out = tmp_path / "toxicology.catalog.json"
    save_catalog(cat, out)
    loaded = load_catalog(out)
    assert catalog_digest(loaded) == catalog_digest(cat)
    assert loaded.fk_edges == cat.fk_edges
    assert loaded.value_index == cat.value_index


def test_supplemental_fk_merge(tmp_path):
    path = tmp_path / "nofk.sqlite"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE parent (id INTEGER PRIMARY KEY, tag TEXT)")
    conn.execute("CREATE TABLE child (id INTEGER PRIMARY KEY, pid INTEGER)")
    conn.commit()
    conn.close()
    bare = build_catalog(path)
    assert bare.fk_edges == ()
    extra = build_catalog(
        path,
        BuildOptions(supplemental_fk_edges=(("child.pid", "parent.id"),)))
    assert ("child.pid", "parent.id") in extra.fk_edges
    assert ("child", "parent") in extra.join_graph_edges


# ---------------------------------------------------------------------------
# Idempotence property: building twice from the same file is byte-identical

_ident = st.text(alphabet=string.ascii_lowercase, min_size=1, max_size=6)


@st.composite
def _schema(draw):
    n_tables = draw(st.integers(min_value=1, max_value=3))
    names = draw(st.lists(_ident, min_size=n_tables, max_size=n_tables,
                          unique=True))
    tables = []
    for name in names:
        cols = draw(st.lists(_ident, min_size=1, max_size=4, unique=True))
        rows = draw(st.lists(
            st.tuples(*[st.one_of(st.integers(-99, 99),
                                  st.text(max_size=6), st.none())
                        for _ in cols]),
            min_size=0, max_size=5))
        tables.append((name, cols, rows))
    return tables


@settings(max_examples=110, deadline=None)
@given(_schema())
def test_catalog_build_is_idempotent(tmp_path_factory, schema):
    path = tmp_path_factory.mktemp("idem") / "db.sqlite"
    conn = sqlite3.connect(path)
    for name, cols, rows in schema:
        col_sql = ", ".join(f'"{c}"' for c in cols)
        conn.execute(f'CREATE TABLE "{name}" ({col_sql})')
        if rows:
            marks = ", ".join("?" for _ in cols)
            conn.executemany(f'INSERT INTO "{name}" VALUES ({marks})', rows)
    conn.commit()
    conn.close()
    first = build_catalog(path)
    second = build_catalog(path)
    assert catalog_digest(first) == catalog_digest(second)
    assert first.value_index == second.value_index
    assert first.signatures == second.signatures


def test_value_cap_skips_huge_columns(tmp_path):
    path = tmp_path / "big.sqlite"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE t (v TEXT)")
    conn.executemany("INSERT INTO t VALUES (?)",
                     [(f"val{i}",) for i in range(50)])
    conn.commit()
    conn.close()
    capped = build_catalog(path, BuildOptions(value_distinct_cap=10))
    assert columns_containing_value(capped, "val1") == frozenset()
    full = build_catalog(path)
    assert columns_containing_value(full, "val1") == frozenset({"t.v"})
