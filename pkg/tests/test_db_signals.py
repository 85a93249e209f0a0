"""Per-signal behavior beyond the paired corpus: clauses, noise, downgrades."""

from __future__ import annotations

from sqltriage.db_signals import run_db_signals, semantic_score
from sqltriage.exec_probe import ExecLimits
from sqltriage.query_model import parse
from sqltriage.signals import (
    DB_SIGNALS,
    DetectionContext,
    Signal,
    SignalThresholds,
)


def _ctx(pipelines, db_id, sql, question="q", **kwargs):
    pipe = pipelines[db_id]
    sq = parse(sql, pipe.catalog)
    return DetectionContext(question=question, sq=sq, catalog=pipe.catalog,
                            db=pipe.db, **kwargs)


def _outcome(outcomes, signal):
    return next(o for o in outcomes if o.signal_id is signal)


def test_outcomes_cover_enabled_signals_in_order(pipelines):
    ctx = _ctx(pipelines, "financial", "SELECT COUNT(*) FROM client;")
    outcomes = run_db_signals(ctx)
    assert [o.signal_id for o in outcomes] == list(DB_SIGNALS)


def test_abnormal_result_names_offending_columns(pipelines):
    ctx = _ctx(pipelines, "financial",
               "SELECT COUNT(*) AS n FROM client WHERE gender = 'X';")
    out = _outcome(run_db_signals(ctx), Signal.ABNORMAL_RESULT)
    assert out.flagged
    assert out.problematic_clauses["abnormal output"] == ["all-zero column: n"]


def test_abnormal_result_downgrades_on_execution_failure(pipelines):
    ctx = _ctx(pipelines, "financial", "SELECT no_such_col FROM client;")
    out = _outcome(run_db_signals(ctx), Signal.ABNORMAL_RESULT)
    assert not out.flagged
    assert "signal skipped" in out.detail


def test_empty_predicate_reports_predicate_text(pipelines):
    ctx = _ctx(pipelines, "financial",
               "SELECT client_id FROM client WHERE gender = 'Female';")
    out = _outcome(run_db_signals(ctx), Signal.EMPTY_PREDICATE)
    assert out.flagged
    assert out.problematic_clauses["empty predicates"] == ["gender = 'Female'"]


def test_empty_predicate_skips_is_null_tests(pipelines):
    # an IS NULL test matching nothing is usually intentional, never flagged
    ctx = _ctx(pipelines, "financial",
               "SELECT client_id FROM client WHERE gender IS NULL;")
    out = _outcome(run_db_signals(ctx), Signal.EMPTY_PREDICATE)
    assert not out.flagged


def test_empty_predicate_in_list_counts_whole_set(pipelines):
    ctx = _ctx(pipelines, "financial",
               "SELECT client_id FROM client WHERE gender IN ('F', 'M');")
    out = _outcome(run_db_signals(ctx), Signal.EMPTY_PREDICATE)
    assert not out.flagged
    assert out.raw_evidence["probe_counts"]["gender IN ('F', 'M')"] > 0


def test_subquery_filter_limits_probe_rows(pipelines):
    ctx = _ctx(pipelines, "codebase_community",
               "SELECT Name FROM badges WHERE UserId = "
               "(SELECT Id FROM users WHERE DisplayName = 'Pierre');")
    out = _outcome(run_db_signals(ctx), Signal.INCORRECT_SUBQUERY_FILTER)
    assert out.flagged
    [clause] = out.problematic_clauses["subqueries returning multiple rows"]
    assert "DisplayName = 'Pierre'" in clause


def test_subquery_filter_single_row_fine(pipelines):
    ctx = _ctx(pipelines, "codebase_community",
               "SELECT Name FROM badges WHERE UserId = "
               "(SELECT Id FROM users WHERE DisplayName = 'Alice');")
    out = _outcome(run_db_signals(ctx), Signal.INCORRECT_SUBQUERY_FILTER)
    assert not out.flagged


def test_join_predicate_clause_is_source_text(pipelines):
    ctx = _ctx(pipelines, "financial",
               "SELECT 1 FROM client INNER JOIN account "
               "ON client.client_id = account.account_id;")
    out = _outcome(run_db_signals(ctx), Signal.INCORRECT_JOIN_PREDICATE)
    assert out.flagged
    assert out.problematic_clauses["invalid join predicates"] == [
        "client.client_id = account.account_id"]


def test_join_predicate_accepts_derived_pair(pipelines):
    # client.district_id = account.district_id is joinable through the shared
    # parent district even though no FK links the two tables directly
    ctx = _ctx(pipelines, "financial",
               "SELECT 1 FROM client c JOIN account a "
               "ON c.district_id = a.district_id;")
    out = _outcome(run_db_signals(ctx), Signal.INCORRECT_JOIN_PREDICATE)
    assert not out.flagged


def test_suboptimal_join_tree_reports_both_sets(pipelines):
    ctx = _ctx(pipelines, "financial",
               "SELECT d.a3 FROM client c "
               "JOIN disp di ON c.client_id = di.client_id "
               "JOIN account a ON di.account_id = a.account_id "
               "JOIN district d ON a.district_id = d.district_id "
               "WHERE c.client_id = 3541;")
    out = _outcome(run_db_signals(ctx), Signal.SUBOPTIMAL_JOIN_TREE)
    assert out.flagged
    used = out.problematic_clauses["tables used in the JOIN clauses"]
    optimal = out.problematic_clauses["optimal set of tables to join"]
    assert set(used) == {"client", "disp", "account", "district"}
    assert set(optimal) == {"client", "district"}


def test_table_similarity_ignores_empty_alternatives(pipelines):
    # driverStandings' columns are a superset of the results usage, but the
    # reverse direction must not fire because results holds zero rows
    ctx = _ctx(pipelines, "formula_1",
               "SELECT AVG(T2.points) FROM drivers AS T1 "
               "INNER JOIN driverStandings AS T2 ON T1.driverId = T2.driverId;")
    out = _outcome(run_db_signals(ctx), Signal.TABLE_SIMILARITY)
    assert not out.flagged


def test_unnecessary_subquery_threshold_is_strict(pipelines):
    three = ("SELECT (SELECT 1 FROM cards), (SELECT 2 FROM cards), "
             "(SELECT 3 FROM cards);")
    ctx = _ctx(pipelines, "card_games", three)
    assert not _outcome(run_db_signals(ctx), Signal.UNNECESSARY_SUBQUERY).flagged
    four = ("SELECT (SELECT 1 FROM cards), (SELECT 2 FROM cards), "
            "(SELECT 3 FROM cards), (SELECT 4 FROM cards);")
    ctx = _ctx(pipelines, "card_games", four)
    out = _outcome(run_db_signals(ctx), Signal.UNNECESSARY_SUBQUERY)
    assert out.flagged
    assert out.raw_evidence["subquery_count"] == 4


def test_unnecessary_subquery_threshold_configurable(pipelines):
    two = "SELECT (SELECT 1 FROM cards), (SELECT 2 FROM cards);"
    ctx = _ctx(pipelines, "card_games", two,
               thresholds=SignalThresholds(subquery_threshold=1))
    assert _outcome(run_db_signals(ctx), Signal.UNNECESSARY_SUBQUERY).flagged


def test_value_ambiguity_names_better_column(pipelines):
    ctx = _ctx(pipelines, "card_games",
               "SELECT artist FROM cards WHERE watermark = 'phyrexian';",
               question="List the artists of cards whose foreign language is "
                        "Phyrexian.")
    out = _outcome(run_db_signals(ctx), Signal.VALUE_AMBIGUITY)
    assert out.flagged
    [finding] = out.problematic_clauses["ambiguous values"]
    assert "foreign_data.language" in finding


def test_value_ambiguity_silent_when_used_column_matches_question(pipelines):
    ctx = _ctx(pipelines, "card_games",
               "SELECT T1.artist FROM cards AS T1 JOIN foreign_data AS T2 "
               "ON T1.uuid = T2.uuid WHERE T2.language = 'Phyrexian';",
               question="List the artists of cards whose foreign language is "
                        "Phyrexian.")
    out = _outcome(run_db_signals(ctx), Signal.VALUE_AMBIGUITY)
    assert not out.flagged


def test_enabled_subset_runs_only_those(pipelines):
    ctx = _ctx(pipelines, "financial", "SELECT COUNT(*) FROM client;")
    outcomes = run_db_signals(ctx, enabled={Signal.ABNORMAL_RESULT})
    assert [o.signal_id for o in outcomes] == [Signal.ABNORMAL_RESULT]


def test_unparseable_query_still_runs_execution_signals(pipelines):
    # parse failures leave the structural signals silent but abnormal-result
    # can still execute the raw SQL
    pipe = pipelines["financial"]
    sq = parse("SELECT client_id FROM client WHERE gender = 'X' "
               "UNION SELECT client_id FROM client WHERE gender = 'Y';",
               pipe.catalog)
    assert not sq.parse_ok
    ctx = DetectionContext(question="q", sq=sq, catalog=pipe.catalog,
                           db=pipe.db)
    outcomes = run_db_signals(ctx)
    abnormal = _outcome(outcomes, Signal.ABNORMAL_RESULT)
    assert abnormal.flagged          # zero matching rows on both branches
    groupby = _outcome(outcomes, Signal.INCORRECT_GROUPBY)
    assert not groupby.flagged


def test_semantic_score_tokenizes_snake_and_camel():
    q = "What is the average points scored by the driver?"
    assert semantic_score(q, "points") == 1.0
    assert semantic_score(q, "driverId") == 0.5
    assert semantic_score(q, "avg_points_scored") > 0.5
    assert semantic_score(q, "watermark") == 0.0


def test_all_signals_never_raise_on_weird_input(pipelines):
    # nonsense SQL and empty question: every outcome must come back
    ctx = _ctx(pipelines, "financial", ")(bad sql", question="")
    outcomes = run_db_signals(ctx)
    assert len(outcomes) == len(DB_SIGNALS)
    assert all(isinstance(o.flagged, bool) for o in outcomes)
