"""Dataset loading, execution-grounded labels, and evaluation plumbing."""

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqltriage.aggregator import Vote, build_decision_vector, labeler_index
from sqltriage.exec_probe import ResultTable, run
from sqltriage.fixtures import (
    REGRESSION_EVIDENCE,
    REGRESSION_GOLD_SQL,
    REGRESSION_QUESTION,
    REGRESSION_SQL,
)
from sqltriage.harness import (
    DatasetExample,
    EvalMode,
    EvalSummary,
    LoadError,
    _self_check_prob,
    collect_vectors,
    eval_correction,
    eval_detection_from_vectors,
    label_semantic_correctness,
    load_examples,
    result_sets_equal,
    signal_microbench,
    write_run_summary,
)
from sqltriage.signals import DB_SIGNALS, Signal, SignalOutcome


def _table(rows, columns=("c",)):
    rows = [tuple(r) for r in rows]
    return ResultTable(columns=list(columns), rows=rows, truncated=False,
                       row_count=len(rows), elapsed_ms=0.0)


# ---------------------------------------------------------------------------
# loading


def _write_corpus(tmp_path, records, predictions):
    dataset = tmp_path / "dataset.json"
    preds = tmp_path / "predictions.json"
    dataset.write_text(json.dumps(records), encoding="utf-8")
    preds.write_text(json.dumps(predictions), encoding="utf-8")
    return dataset, preds


def test_load_examples_joins_on_question_id(tmp_path):
    records = [
        {"question_id": 7, "question": "q7", "db_id": "financial",
         "SQL": "SELECT 1", "evidence": "ev"},
        {"question_id": 8, "question": "q8", "db_id": "financial",
         "SQL": "SELECT 2"},
    ]
    dataset, preds = _write_corpus(tmp_path, records,
                                   {"7": "SELECT 10", "8": "SELECT 20"})
    examples = load_examples(dataset, preds, generator_tag="demo")
    assert [e.query_id for e in examples] == ["7", "8"]
    assert examples[0].evidence == "ev"
    assert examples[1].evidence == ""
    assert all(e.generator_tag == "demo" for e in examples)
    assert examples[0].predicted_sql == "SELECT 10"


def test_load_examples_index_fallback_ids(tmp_path):
    records = [{"question": "q", "db_id": "d", "SQL": "SELECT 1"}]
    dataset, preds = _write_corpus(tmp_path, records, {"0": "SELECT 9"})
    examples = load_examples(dataset, preds)
    assert examples[0].query_id == "0"


def test_load_examples_skips_missing_predictions(tmp_path, capsys):
    records = [
        {"question_id": 1, "question": "a", "db_id": "d", "SQL": "SELECT 1"},
        {"question_id": 2, "question": "b", "db_id": "d", "SQL": "SELECT 2"},
    ]
    dataset, preds = _write_corpus(tmp_path, records, {"1": "SELECT 1"})
    examples = load_examples(dataset, preds)
    assert [e.query_id for e in examples] == ["1"]
    assert "no prediction for 1 example(s)" in capsys.readouterr().out


def test_load_examples_rejects_non_array_dataset(tmp_path):
    dataset, preds = _write_corpus(tmp_path, {"not": "a list"}, {"0": "SELECT 1"})
    with pytest.raises(LoadError):
        load_examples(dataset, preds)


def test_load_examples_rejects_non_object_predictions(tmp_path):
    dataset, preds = _write_corpus(
        tmp_path, [{"question": "q", "db_id": "d", "SQL": "s"}], ["SELECT 1"])
    with pytest.raises(LoadError):
        load_examples(dataset, preds)


def test_load_examples_rejects_empty_predictions(tmp_path):
    dataset, preds = _write_corpus(
        tmp_path, [{"question": "q", "db_id": "d", "SQL": "s"}], {})
    with pytest.raises(LoadError):
        load_examples(dataset, preds)


def test_load_examples_collects_malformed_records(tmp_path):
    records = [
        {"question": "ok", "db_id": "d", "SQL": "SELECT 1"},
        {"question": "missing sql", "db_id": "d"},
        "not even an object",
    ]
    dataset, preds = _write_corpus(tmp_path, records, {"0": "SELECT 1"})
    with pytest.raises(LoadError) as excinfo:
        load_examples(dataset, preds)
    assert len(excinfo.value.records) == 2


def test_load_examples_rejects_non_string_prediction(tmp_path):
    records = [{"question_id": 1, "question": "q", "db_id": "d", "SQL": "s"}]
    dataset, preds = _write_corpus(tmp_path, records, {"1": 42})
    with pytest.raises(LoadError):
        load_examples(dataset, preds)


# ---------------------------------------------------------------------------
# result-set equality


def test_result_equality_ignores_row_order():
    assert result_sets_equal(_table([(1,), (2,)]), _table([(2,), (1,)]))


def test_result_equality_keeps_column_order_significant():
    assert not result_sets_equal(_table([(1, 2)], ("a", "b")),
                                 _table([(2, 1)], ("a", "b")))


def test_result_equality_unifies_ints_and_integral_floats():
    assert result_sets_equal(_table([(1.0,)]), _table([(1,)]))
    assert result_sets_equal(_table([(True,)]), _table([(1,)]))


def test_result_equality_quantizes_floats():
    assert result_sets_equal(_table([(0.1 + 0.2,)]), _table([(0.3,)]))
    assert not result_sets_equal(_table([(0.35,)]), _table([(0.3,)]))
    assert result_sets_equal(_table([(float("nan"),)]),
                             _table([(float("nan"),)]))


def test_result_equality_multiset_flag():
    a, b = _table([(1,), (1,)]), _table([(1,)])
    assert result_sets_equal(a, b)
    assert not result_sets_equal(a, b, multiset=True)
    assert result_sets_equal(a, _table([(1,), (1,)]), multiset=True)


_value = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-10, max_value=10),
    st.floats(min_value=-5, max_value=5, allow_nan=False),
    st.sampled_from(["x", "y", "Jesenik"]),
)
_row = st.tuples(_value, _value)
_rows = st.lists(_row, min_size=0, max_size=6)


@settings(max_examples=120, deadline=None)
@given(rows_a=_rows, rows_b=_rows, rows_c=_rows, multiset=st.booleans())
def test_result_equality_is_an_equivalence_relation(rows_a, rows_b, rows_c,
                                                    multiset):
    a, b, c = (_table(r, ("x", "y")) for r in (rows_a, rows_b, rows_c))
    # reflexive, symmetric, transitive
    assert result_sets_equal(a, a, multiset=multiset)
    assert (result_sets_equal(a, b, multiset=multiset)
            == result_sets_equal(b, a, multiset=multiset))
    if (result_sets_equal(a, b, multiset=multiset)
            and result_sets_equal(b, c, multiset=multiset)):
        assert result_sets_equal(a, c, multiset=multiset)


@settings(max_examples=120, deadline=None)
@given(rows=_rows, seed=st.integers(min_value=0, max_value=999))
def test_result_equality_is_permutation_invariant(rows, seed):
    import random

    shuffled = list(rows)
    random.Random(seed).shuffle(shuffled)
    assert result_sets_equal(_table(rows, ("x", "y")),
                             _table(shuffled, ("x", "y")), multiset=True)


# ---------------------------------------------------------------------------
# gold labeling


def _example(predicted, gold=REGRESSION_GOLD_SQL, query_id="r1"):
    return DatasetExample(query_id=query_id, question=REGRESSION_QUESTION,
                          db_id="financial", gold_sql=gold,
                          predicted_sql=predicted, evidence=REGRESSION_EVIDENCE)


def test_label_correct_incorrect_invalid(pipelines):
    db = pipelines["financial"].db
    assert label_semantic_correctness(_example(REGRESSION_GOLD_SQL), db) == "correct"
    assert label_semantic_correctness(_example(REGRESSION_SQL), db) == "incorrect"
    assert label_semantic_correctness(_example(")(not sql"), db) == "invalid"


def test_label_gold_failure_raises(pipelines):
    db = pipelines["financial"].db
    bad_gold = _example("SELECT 1", gold="SELECT nope FROM missing_table")
    with pytest.raises(ValueError):
        label_semantic_correctness(bad_gold, db)


# ---------------------------------------------------------------------------
# vector collection


def test_collect_vectors_drops_invalid(pipelines):
    examples = [
        _example(REGRESSION_GOLD_SQL, query_id="good"),
        _example(REGRESSION_SQL, query_id="bad"),
        _example("completely broken", query_id="invalid"),
    ]
    vectors, labels, probs, kept, n_invalid = collect_vectors(
        examples, pipelines["financial"])
    assert [e.query_id for e in kept] == ["good", "bad"]
    assert labels == [0, 1]
    assert n_invalid == 1
    assert probs == {}
    assert len(vectors) == 2
    assert vectors[1].votes[labeler_index(Signal.INCORRECT_JOIN_PREDICATE)] \
        is Vote.VOTE_INCORRECT


def test_collect_vectors_accepts_pipeline_mapping(pipelines):
    examples = [_example(REGRESSION_GOLD_SQL, query_id="g")]
    vectors, labels, _, kept, _ = collect_vectors(examples, pipelines)
    assert labels == [0]
    assert kept[0].query_id == "g"


def test_collect_vectors_threaded_matches_serial(pipelines):
    examples = [
        _example(REGRESSION_GOLD_SQL, query_id="a"),
        _example(REGRESSION_SQL, query_id="b"),
    ]
    serial = collect_vectors(examples, pipelines["financial"], max_workers=1)
    threaded = collect_vectors(examples, pipelines["financial"], max_workers=4)
    assert serial[0] == threaded[0]
    assert serial[1] == threaded[1]


# ---------------------------------------------------------------------------
# detection evaluation over synthetic vectors


def _synthetic_corpus(n=120, seed=3):
    """Planted corpus: flags correlate with the hidden label."""
    import random

    rng = random.Random(seed)
    vectors, labels = [], []
    for i in range(n):
        incorrect = rng.random() < 0.45
        outcomes = []
        for signal in Signal:
            fire = rng.random() < (0.7 if incorrect else 0.08)
            outcomes.append(SignalOutcome(signal_id=signal, flagged=fire))
        vectors.append(build_decision_vector(outcomes, query_id=f"q{i:04d}"))
        labels.append(1 if incorrect else 0)
    return vectors, labels


def test_eval_detection_requires_alignment():
    vectors, labels = _synthetic_corpus(30)
    with pytest.raises(ValueError):
        eval_detection_from_vectors(vectors, labels[:-1])


def test_eval_detection_weak_mode_beats_chance():
    vectors, labels = _synthetic_corpus(150)
    result = eval_detection_from_vectors(vectors, labels, EvalMode.WEAK, folds=3)
    assert result.mode == "WEAK"
    assert result.folds == 3
    assert len(result.per_fold["accuracy"]) == 3
    assert result.mean["accuracy"] > 0.7
    assert result.n_examples == 150


def test_eval_detection_is_input_order_invariant():
    vectors, labels = _synthetic_corpus(90)
    straight = eval_detection_from_vectors(vectors, labels, EvalMode.WEAK, folds=3)
    paired = list(zip(vectors, labels))
    import random

    random.Random(11).shuffle(paired)
    shuffled = eval_detection_from_vectors([v for v, _ in paired],
                                           [y for _, y in paired],
                                           EvalMode.WEAK, folds=3)
    assert straight.mean == shuffled.mean
    assert straight.per_fold == shuffled.per_fold


def test_eval_detection_supervised_mode():
    vectors, labels = _synthetic_corpus(150)
    result = eval_detection_from_vectors(vectors, labels, EvalMode.SUPERVISED,
                                         folds=3)
    assert result.mean["accuracy"] > 0.7
    assert "auc" in result.mean


def test_eval_detection_self_eval_bool_reads_the_vote():
    vectors, labels = _synthetic_corpus(100)
    result = eval_detection_from_vectors(vectors, labels,
                                         EvalMode.SELF_EVAL_BOOL, folds=4)
    idx = labeler_index(Signal.LLM_SELF_CHECK)
    votes = [v.votes[idx] is Vote.VOTE_INCORRECT for v in vectors]
    agreement = sum(int(vote == bool(label))
                    for vote, label in zip(votes, labels)) / len(labels)
    assert math.isclose(result.mean["accuracy"],
                        sum(result.per_fold["accuracy"]) / 4)
    assert abs(result.mean["accuracy"] - agreement) < 0.15
    assert "auc" not in result.mean


def test_self_check_prob_fallback_votes():
    vectors, _ = _synthetic_corpus(10)
    idx = labeler_index(Signal.LLM_SELF_CHECK)
    for vector in vectors:
        fallback = _self_check_prob(vector, None, vector.query_id)
        if vector.votes[idx] is Vote.VOTE_INCORRECT:
            assert fallback == 0.25
        else:
            assert fallback == 0.75
    supplied = _self_check_prob(vectors[0], {vectors[0].query_id: 0.6},
                                vectors[0].query_id)
    assert supplied == 0.6


def test_eval_detection_self_eval_prob_uses_supplied_probabilities():
    vectors, labels = _synthetic_corpus(100)
    # an oracle probability map should saturate accuracy
    probs = {v.query_id: (0.05 if label else 0.95)
             for v, label in zip(vectors, labels)}
    result = eval_detection_from_vectors(vectors, labels,
                                         EvalMode.SELF_EVAL_PROB, folds=4,
                                         self_check_probs=probs)
    assert result.mean["accuracy"] == 1.0
    assert result.mean["auc"] == 1.0


# ---------------------------------------------------------------------------
# correction evaluation


def test_eval_correction_counts_and_identities(pipelines):
    db = pipelines["financial"].db
    examples = [
        _example(REGRESSION_SQL, query_id="fixable"),
        _example(")(broken", query_id="invalid-fixable"),
        _example(REGRESSION_GOLD_SQL, query_id="already-good"),
        _example(REGRESSION_GOLD_SQL, query_id="gets-broken"),
    ]
    final = {
        "fixable": REGRESSION_GOLD_SQL,
        "invalid-fixable": REGRESSION_GOLD_SQL,
        "already-good": REGRESSION_GOLD_SQL,
        "gets-broken": REGRESSION_SQL,
    }
    result = eval_correction(examples, lambda e: final[e.query_id], db)
    assert result.n_fix == 2
    assert result.n_break == 1
    assert result.n_net == result.n_fix - result.n_break == 1
    assert result.n_examples == 4
    assert result.delta_acc == result.n_net / 4
    assert result.delta_acc_fix == result.n_fix / 4
    assert result.initial_acc == 0.5
    assert result.final_acc == 0.75
    assert result.transitions == {
        "incorrect->correct": 1,
        "invalid->correct": 1,
        "correct->correct": 1,
        "correct->incorrect": 1,
    }


def test_eval_correction_identity_corrector_changes_nothing(pipelines):
    db = pipelines["financial"].db
    examples = [
        _example(REGRESSION_SQL, query_id="a"),
        _example(REGRESSION_GOLD_SQL, query_id="b"),
    ]
    result = eval_correction(examples, lambda e: e.predicted_sql, db)
    assert result.n_fix == result.n_break == result.n_net == 0
    assert result.initial_acc == result.final_acc == 0.5
    assert result.delta_acc == 0.0


# ---------------------------------------------------------------------------
# per-signal microbenchmark


def test_microbench_identities_on_paired_corpus(pipelines, paired_examples):
    rows = signal_microbench(paired_examples, pipelines, signals=DB_SIGNALS)
    assert [r.signal for r in rows] == list(DB_SIGNALS)
    total_incorrect = 9
    for row in rows:
        assert 0 <= row.n_w <= row.flagged_total
        if row.flagged_total:
            assert row.precision == row.n_w / row.flagged_total
            assert row.n_w == round(row.recall * total_incorrect)
        else:
            assert row.precision is None
            assert row.recall == 0.0
            assert row.note == "No queries detected"
        # the paired construction guarantees at least one true hit per signal
    hits = {r.signal: r.n_w for r in rows}
    assert all(hits[s] >= 1 for s in DB_SIGNALS)


def test_microbench_respects_signal_subset(pipelines, paired_examples):
    rows = signal_microbench(paired_examples, pipelines,
                             signals=[Signal.EMPTY_PREDICATE])
    assert len(rows) == 1
    assert rows[0].signal is Signal.EMPTY_PREDICATE


# ---------------------------------------------------------------------------
# run summaries


def test_write_run_summary_artifacts(tmp_path, pipelines):
    db = pipelines["financial"].db
    examples = [
        _example(REGRESSION_SQL, query_id="x"),
        _example(REGRESSION_GOLD_SQL, query_id="y"),
    ]
    correction = eval_correction(examples, lambda e: REGRESSION_GOLD_SQL, db)
    summary = EvalSummary(correction=correction)
    run_dir = tmp_path / "run"
    write_run_summary(run_dir, {"mode": "demo", "folds": 3}, summary,
                      catalog_digests={"financial": "abc123"})
    config = json.loads((run_dir / "config.json").read_text())
    assert config["mode"] == "demo"
    assert config["catalog_digests"] == {"financial": "abc123"}
    doc = json.loads((run_dir / "summary.json").read_text())
    assert doc["correction"]["n_fix"] == 1
    assert doc["correction"]["n_net"] == doc["correction"]["n_fix"] - \
        doc["correction"]["n_break"]
    csv_lines = (run_dir / "summary.csv").read_text().splitlines()
    assert csv_lines[0] == "section,metric,value"
    assert any(line.startswith("correction,n_fix,") for line in csv_lines)
