"""Weak-supervision tests: votes, EM fitting, posteriors, buckets, classifier."""

from __future__ import annotations

import math
import random

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from sqltriage.aggregator import (
    BUCKETS,
    DecisionVector,
    FitConfig,
    FitError,
    LABELER_IDS,
    REGISTRY_SIZE,
    TrainingMode,
    Vote,
    build_decision_vector,
    confidence_bucket,
    default_label_model,
    fit_label_model,
    labeler_index,
    load_classifier,
    load_label_model,
    posterior,
    predict,
    save_classifier,
    save_label_model,
    train_classifier,
)
from sqltriage.signals import ALL_SIGNALS, DB_SIGNALS, LLM_SIGNALS, Signal, SignalOutcome


def _signal_votes(flagged_signals):
    flagged = set(flagged_signals)
    votes = [Vote.VOTE_INCORRECT if s in flagged else Vote.ABSTAIN
             for s in ALL_SIGNALS]
    any_f = bool(flagged)
    db_f = bool(flagged & set(DB_SIGNALS))
    llm_f = bool(flagged & set(LLM_SIGNALS))
    votes += [Vote.ABSTAIN if any_f else Vote.VOTE_CORRECT,
              Vote.ABSTAIN if db_f else Vote.VOTE_CORRECT,
              Vote.ABSTAIN if llm_f else Vote.VOTE_CORRECT]
    return tuple(votes)


def test_registry_shape():
    assert REGISTRY_SIZE == 17
    assert LABELER_IDS[:14] == tuple(s.value for s in ALL_SIGNALS)
    assert LABELER_IDS[14:] == ("positive_all", "positive_db", "positive_llm")
    assert labeler_index(Signal.ABNORMAL_RESULT) == 0
    assert labeler_index("positive_llm") == 16


def test_vector_role_constraints():
    votes = list(_signal_votes([]))
    votes[0] = Vote.VOTE_CORRECT      # signals may never assert correctness
    with pytest.raises(ValueError):
        DecisionVector(votes=tuple(votes))
    votes = list(_signal_votes([]))
    votes[14] = Vote.VOTE_INCORRECT   # positives may never assert errors
    with pytest.raises(ValueError):
        DecisionVector(votes=tuple(votes))
    with pytest.raises(ValueError):
        DecisionVector(votes=(Vote.ABSTAIN,) * 5)


def test_build_decision_vector_from_outcomes():
    outcomes = [
        SignalOutcome(signal_id=Signal.EMPTY_PREDICATE, flagged=True,
                      problematic_clauses={"empty predicates": ["x = 1"]}),
        SignalOutcome(signal_id=Signal.LLM_SELF_CHECK, flagged=False),
    ]
    vec = build_decision_vector(outcomes, query_id="q7")
    assert vec.query_id == "q7"
    assert vec.votes[labeler_index(Signal.EMPTY_PREDICATE)] is Vote.VOTE_INCORRECT
    assert vec.votes[labeler_index("positive_all")] is Vote.ABSTAIN
    assert vec.votes[labeler_index("positive_db")] is Vote.ABSTAIN
    # the LLM group stayed silent, so its positive labeler asserts correctness
    assert vec.votes[labeler_index("positive_llm")] is Vote.VOTE_CORRECT


# Property: the all-clear labeler implies both group labelers (>= 100 cases)
@settings(max_examples=150, deadline=None)
@given(st.sets(st.sampled_from(list(ALL_SIGNALS))))
def test_positive_labeler_implication(flagged):
    outcomes = [
        SignalOutcome(signal_id=s, flagged=(s in flagged),
                      problematic_clauses={"c": ["x"]} if s in flagged else {})
        for s in ALL_SIGNALS
    ]
    vec = build_decision_vector(outcomes)
    all_c = vec.votes[labeler_index("positive_all")] is Vote.VOTE_CORRECT
    db_c = vec.votes[labeler_index("positive_db")] is Vote.VOTE_CORRECT
    llm_c = vec.votes[labeler_index("positive_llm")] is Vote.VOTE_CORRECT
    if all_c:
        assert db_c and llm_c
    assert all_c == (db_c and llm_c)
    # and signal votes mirror the flag set exactly
    for s in ALL_SIGNALS:
        expected = Vote.VOTE_INCORRECT if s in flagged else Vote.ABSTAIN
        assert vec.votes[labeler_index(s)] is expected


def _planted_corpus(n, seed=0, prior=0.4):
    """Synthetic corpus from a conditionally-independent planted model."""
    rng = random.Random(seed)
    fire_given_incorrect = {s: 0.6 + 0.3 * rng.random() for s in ALL_SIGNALS}
    fire_given_correct = {s: 0.02 + 0.08 * rng.random() for s in ALL_SIGNALS}
    vecs, labels = [], []
    for i in range(n):
        y = 1 if rng.random() < prior else 0
        flagged = {
            s for s in ALL_SIGNALS
            if rng.random() < (fire_given_incorrect[s] if y
                               else fire_given_correct[s])
        }
        vecs.append(DecisionVector(votes=_signal_votes(flagged),
                                   query_id=str(i)))
        labels.append(y)
    return vecs, labels, fire_given_incorrect


def test_fit_requires_twenty_vectors():
    vecs, _, _ = _planted_corpus(19)
    with pytest.raises(FitError):
        fit_label_model(vecs)


def test_fit_rejects_all_abstain_corpus():
    empty = DecisionVector(votes=(Vote.ABSTAIN,) * REGISTRY_SIZE)
    # positives abstaining everywhere is structurally legal but unfittable
    with pytest.raises(FitError):
        fit_label_model([empty] * 30)


def test_fit_log_likelihood_is_monotone():
    vecs, _, _ = _planted_corpus(300, seed=3)
    params = fit_label_model(vecs, FitConfig(max_iter=100))
    trace = params.ll_trace
    assert len(trace) == params.iterations
    assert all(b >= a - 1e-8 * max(1.0, abs(a))
               for a, b in zip(trace, trace[1:]))


def test_fit_recovers_planted_accuracies():
    vecs, labels, planted = _planted_corpus(2500, seed=11)
    params = fit_label_model(vecs)
    # EM may swap latent classes; orient by agreement with gold
    post = np.array([posterior(params, v) for v in vecs])
    y = np.array(labels)
    if np.mean((post >= 0.5) == y) < 0.5:
        pytest.fail("label model landed on the swapped solution")
    for s in ALL_SIGNALS:
        est = params.accuracy(labeler_index(s))
        assert abs(est - planted[s]) < 0.06, s


def test_posterior_all_abstain_returns_prior_exactly():
    vecs, _, _ = _planted_corpus(100, seed=5)
    params = fit_label_model(vecs)
    empty = DecisionVector(votes=(Vote.ABSTAIN,) * REGISTRY_SIZE)
    assert posterior(params, empty) == params.class_prior


def test_posterior_is_finite_on_extreme_vectors():
    vecs, _, _ = _planted_corpus(200, seed=9)
    params = fit_label_model(vecs)
    everything = DecisionVector(votes=_signal_votes(set(ALL_SIGNALS)))
    nothing = DecisionVector(votes=_signal_votes(set()))
    for vec in (everything, nothing):
        p = posterior(params, vec)
        assert math.isfinite(p) and 0.0 <= p <= 1.0
    assert posterior(params, everything) > posterior(params, nothing)


def test_default_model_bucket_spread():
    dm = default_label_model()
    buckets = {s: confidence_bucket(dm, s) for s in ALL_SIGNALS}
    assert buckets[Signal.SUBOPTIMAL_JOIN_TREE] == "high"
    assert buckets[Signal.ABNORMAL_RESULT] == "high"
    assert buckets[Signal.INCORRECT_GROUPBY] == "low"
    assert set(buckets.values()) == set(BUCKETS)


def test_equal_accuracy_labelers_share_a_bucket():
    dm = default_label_model()
    emissions = dm.emissions.copy()
    # force two far-apart labelers to identical accuracy across the tertile cut
    inc = 0
    emissions[labeler_index(Signal.INCORRECT_GROUPBY), 0, inc] = \
        emissions[labeler_index(Signal.ABNORMAL_RESULT), 0, inc]
    dm.emissions = emissions
    assert confidence_bucket(dm, Signal.INCORRECT_GROUPBY) == \
        confidence_bucket(dm, Signal.ABNORMAL_RESULT) == "high"


def test_classifier_weak_vs_supervised():
    vecs, labels, _ = _planted_corpus(600, seed=21)
    params = fit_label_model(vecs)
    probs = [posterior(params, v) for v in vecs]
    weak = train_classifier(vecs, probs, mode=TrainingMode.WEAK)
    sup = train_classifier(vecs, labels, mode=TrainingMode.SUPERVISED)
    for clf in (weak, sup):
        preds = [predict(clf, v) for v in vecs]
        acc = sum((p.verdict == "incorrect") == bool(y)
                  for p, y in zip(preds, labels)) / len(labels)
        assert acc > 0.8
        assert all(0.0 <= p.probability <= 1.0 for p in preds)


def test_classifier_errors():
    vecs, labels, _ = _planted_corpus(30, seed=2)
    with pytest.raises(FitError):
        train_classifier(vecs[:5], labels[:5], mode=TrainingMode.SUPERVISED)
    with pytest.raises(FitError):
        train_classifier(vecs, [1] * len(vecs), mode=TrainingMode.SUPERVISED)
    with pytest.raises(FitError):
        train_classifier(vecs, [0.7] * 10, mode=TrainingMode.WEAK)
    with pytest.raises(FitError):
        train_classifier(vecs, [2] * len(vecs), mode=TrainingMode.SUPERVISED)


def test_threshold_shifts_verdict():
    vecs, labels, _ = _planted_corpus(100, seed=4)
    strict = train_classifier(vecs, labels, mode=TrainingMode.SUPERVISED,
                              threshold=0.99)
    lax = train_classifier(vecs, labels, mode=TrainingMode.SUPERVISED,
                           threshold=0.01)
    n_strict = sum(predict(strict, v).verdict == "incorrect" for v in vecs)
    n_lax = sum(predict(lax, v).verdict == "incorrect" for v in vecs)
    assert n_strict <= n_lax


def test_label_model_save_load(tmp_path):
    vecs, _, _ = _planted_corpus(80, seed=6)
    params = fit_label_model(vecs)
    path = tmp_path / "label_model.json"
    save_label_model(params, path)
    loaded = load_label_model(path)
    assert loaded.class_prior == pytest.approx(params.class_prior)
    assert np.allclose(loaded.emissions, params.emissions)
    vec = vecs[0]
    assert posterior(loaded, vec) == pytest.approx(posterior(params, vec))


def test_classifier_save_load(tmp_path):
    vecs, labels, _ = _planted_corpus(60, seed=8)
    clf = train_classifier(vecs, labels, mode=TrainingMode.SUPERVISED)
    path = tmp_path / "classifier.json"
    save_classifier(clf, path)
    loaded = load_classifier(path)
    for vec in vecs[:10]:
        assert loaded.probability(vec) == pytest.approx(clf.probability(vec))


def test_load_rejects_mismatched_kind(tmp_path):
    vecs, labels, _ = _planted_corpus(60, seed=8)
    clf = train_classifier(vecs, labels, mode=TrainingMode.SUPERVISED)
    path = tmp_path / "classifier.json"
    save_classifier(clf, path)
    with pytest.raises(ValueError):
        load_label_model(path)
