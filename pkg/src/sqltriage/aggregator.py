"""Weak-supervision aggregation of signal outcomes into correctness labels.

Signals become labeling functions that vote incorrect or abstain; three
positive labelers vote correct when a signal group stays silent.  A
conditionally-independent generative model over the votes is fit with EM,
yielding probabilistic labels, a downstream classifier, and per-labeler
confidence buckets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from sklearn.linear_model import LogisticRegression

from sqltriage.signals import ALL_SIGNALS, DB_SIGNALS, LLM_SIGNALS, Signal

PARAMS_FORMAT_VERSION = 1


class Vote(Enum):
    VOTE_INCORRECT = "incorrect"
    VOTE_CORRECT = "correct"
    ABSTAIN = "abstain"


VOTE_ORDER = (Vote.VOTE_INCORRECT, Vote.VOTE_CORRECT, Vote.ABSTAIN)
_VOTE_INDEX = {v: i for i, v in enumerate(VOTE_ORDER)}

POSITIVE_ALL = "positive_all"
POSITIVE_DB = "positive_db"
POSITIVE_LLM = "positive_llm"
POSITIVE_LABELERS = (POSITIVE_ALL, POSITIVE_DB, POSITIVE_LLM)

# Fixed labeler registry: the 14 signals, then the three positive labelers.
LABELER_IDS = tuple(s.value for s in ALL_SIGNALS) + POSITIVE_LABELERS
REGISTRY_SIZE = len(LABELER_IDS)
_LABELER_INDEX = {lid: i for i, lid in enumerate(LABELER_IDS)}
_POSITIVE_START = len(ALL_SIGNALS)


class FitError(Exception):
    """Raised when a model cannot be fit from the given corpus."""


def labeler_index(labeler) -> int:
    lid = labeler.value if isinstance(labeler, Signal) else str(labeler)
    return _LABELER_INDEX[lid]


def is_positive_labeler(index: int) -> bool:
    return index >= _POSITIVE_START


@dataclass(frozen=True)
class DecisionVector:
    """Fixed-order labeling-function votes for one query."""

    votes: tuple
    query_id: str = ""

    def __post_init__(self):
        if len(self.votes) != REGISTRY_SIZE:
            raise ValueError(f"expected {REGISTRY_SIZE} votes, got {len(self.votes)}")
        for idx, vote in enumerate(self.votes):
            if not isinstance(vote, Vote):
                raise ValueError(f"vote {idx} is not a Vote: {vote!r}")
            if is_positive_labeler(idx) and vote is Vote.VOTE_INCORRECT:
                raise ValueError(f"positive labeler {LABELER_IDS[idx]} cannot vote incorrect")
            if not is_positive_labeler(idx) and vote is Vote.VOTE_CORRECT:
                raise ValueError(f"signal labeler {LABELER_IDS[idx]} cannot vote correct")

    def all_abstain(self) -> bool:
        return all(v is Vote.ABSTAIN for v in self.votes)


def build_decision_vector(outcomes, query_id: str = "") -> DecisionVector:
    """Recast signal outcomes as labeling-function votes.

    Signals vote incorrect when flagged, abstain otherwise (including when
    disabled or missing).  The positive labelers vote correct only when their
    whole signal group stayed silent.
    """
    flagged = {o.signal_id for o in outcomes if o.flagged}
    votes = [
        Vote.VOTE_INCORRECT if s in flagged else Vote.ABSTAIN
        for s in ALL_SIGNALS
    ]
    votes.append(Vote.VOTE_CORRECT if not flagged else Vote.ABSTAIN)
    votes.append(
        Vote.VOTE_CORRECT if not (flagged & set(DB_SIGNALS)) else Vote.ABSTAIN
    )
    votes.append(
        Vote.VOTE_CORRECT if not (flagged & set(LLM_SIGNALS)) else Vote.ABSTAIN
    )
    return DecisionVector(votes=tuple(votes), query_id=query_id)


@dataclass
class LabelModelParams:
    """Fitted generative model: class prior plus per-labeler emission tables."""

    class_prior: float                      # P(Y = incorrect)
    emissions: np.ndarray                   # (labelers, 2 classes, 3 votes)
    ll_trace: list = field(default_factory=list)
    iterations: int = 0
    labeler_ids: tuple = LABELER_IDS

    def accuracy(self, index: int) -> float:
        """P(VOTE_INCORRECT | Y=incorrect): the weight behind an incorrect-vote."""
        return float(self.emissions[index, 0, _VOTE_INDEX[Vote.VOTE_INCORRECT]])


@dataclass
class FitConfig:
    max_iter: int = 200
    tol: float = 1e-7
    seed: int = 0


def _vote_matrix(vectors) -> np.ndarray:
    data = np.empty((len(vectors), REGISTRY_SIZE), dtype=np.int8)
    for i, vec in enumerate(vectors):
        for j, vote in enumerate(vec.votes):
            data[i, j] = _VOTE_INDEX[vote]
    return data


def _initial_emissions() -> np.ndarray:
    """Start every labeler at 0.7 accuracy with structural zeros in place."""
    em = np.zeros((REGISTRY_SIZE, 2, 3))
    inc, cor, abstain = (_VOTE_INDEX[Vote.VOTE_INCORRECT],
                         _VOTE_INDEX[Vote.VOTE_CORRECT],
                         _VOTE_INDEX[Vote.ABSTAIN])
    for j in range(REGISTRY_SIZE):
        if is_positive_labeler(j):
            em[j, 0, cor] = 0.3      # P(correct-vote | Y=incorrect)
            em[j, 0, abstain] = 0.7
            em[j, 1, cor] = 0.7      # P(correct-vote | Y=correct)
            em[j, 1, abstain] = 0.3
        else:
            em[j, 0, inc] = 0.7      # P(incorrect-vote | Y=incorrect)
            em[j, 0, abstain] = 0.3
            em[j, 1, inc] = 0.3      # P(incorrect-vote | Y=correct)
            em[j, 1, abstain] = 0.7
    return em


def _log_likelihood(data: np.ndarray, prior: float, emissions: np.ndarray) -> float:
    log_inc, log_cor = _per_vector_class_logs(data, emissions)
    joint = np.logaddexp(math.log(prior) + log_inc, math.log1p(-prior) + log_cor)
    return float(np.sum(joint))


def _per_vector_class_logs(data: np.ndarray, emissions: np.ndarray):
    """Sum of per-labeler log emission probabilities for each class."""
    log_em = np.log(np.maximum(emissions, 1e-300))
    cols = np.arange(data.shape[1])
    log_inc = log_em[cols, 0, :][cols, data].sum(axis=1)
    log_cor = log_em[cols, 1, :][cols, data].sum(axis=1)
    return log_inc, log_cor


def fit_label_model(vectors, config: FitConfig | None = None) -> LabelModelParams:
    """Batch EM over the conditionally-independent vote model."""
    config = config or FitConfig()
    if len(vectors) < 20:
        raise FitError(f"need at least 20 decision vectors, got {len(vectors)}")
    if all(vec.all_abstain() for vec in vectors):
        raise FitError("every decision vector abstains everywhere; nothing to fit")
    data = _vote_matrix(vectors)
    prior = 0.5
    emissions = _initial_emissions()
    structural = emissions == 0.0
    ll_trace: list[float] = []
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        log_inc, log_cor = _per_vector_class_logs(data, emissions)
        log_joint_inc = math.log(prior) + log_inc
        log_joint_cor = math.log1p(-prior) + log_cor
        ll = float(np.sum(np.logaddexp(log_joint_inc, log_joint_cor)))
        ll_trace.append(ll)
        resp = np.exp(log_joint_inc - np.logaddexp(log_joint_inc, log_joint_cor))
        new_prior = float(np.clip(resp.mean(), 1e-6, 1 - 1e-6))
        new_emissions = np.zeros_like(emissions)
        weights = np.stack([resp, 1.0 - resp], axis=1)  # (n, 2)
        for v_idx in range(3):
            mask = (data == v_idx).astype(float)        # (n, labelers)
            counts = weights.T @ mask                   # (2, labelers)
            new_emissions[:, :, v_idx] = counts.T
        totals = new_emissions.sum(axis=2, keepdims=True)
        new_emissions = np.divide(new_emissions, totals, where=totals > 0)
        new_emissions[structural] = 0.0
        renorm = new_emissions.sum(axis=2, keepdims=True)
        new_emissions = np.divide(new_emissions, renorm, where=renorm > 0)
        converged = iterations > 1 and abs(ll_trace[-1] - ll_trace[-2]) < config.tol
        prior = new_prior
        emissions = new_emissions
        if converged:
            break
    for earlier, later in zip(ll_trace, ll_trace[1:]):
        # exact EM never decreases the likelihood; allow float jitter only
        if later < earlier - 1e-8 * max(1.0, abs(earlier)):
            raise FitError(
                f"log-likelihood decreased from {earlier} to {later}")
    return LabelModelParams(
        class_prior=prior,
        emissions=emissions,
        ll_trace=ll_trace,
        iterations=iterations,
    )


def posterior(params: LabelModelParams, vec: DecisionVector) -> float:
    """P(Y=incorrect | votes); an all-abstain vector returns the prior exactly."""
    if vec.all_abstain():
        return params.class_prior
    data = _vote_matrix([vec])
    log_inc, log_cor = _per_vector_class_logs(data, params.emissions)
    log_joint_inc = math.log(params.class_prior) + float(log_inc[0])
    log_joint_cor = math.log1p(-params.class_prior) + float(log_cor[0])
    top = max(log_joint_inc, log_joint_cor)
    p_inc = math.exp(log_joint_inc - top)
    return p_inc / (p_inc + math.exp(log_joint_cor - top))


# ---------------------------------------------------------------------------
# Downstream classifier


class TrainingMode(str, Enum):
    WEAK = "WEAK"
    SUPERVISED = "SUPERVISED"


@dataclass
class CorrectnessClassifier:
    """Logistic model over one-hot (labeler, vote) features."""

    weights: np.ndarray                 # (REGISTRY_SIZE * 3,)
    bias: float
    threshold: float = 0.5
    labeler_ids: tuple = LABELER_IDS

    def probability(self, vec: DecisionVector) -> float:
        x = _one_hot([vec])[0]
        z = float(x @ self.weights + self.bias)
        return 1.0 / (1.0 + math.exp(-z))


@dataclass
class Prediction:
    verdict: str          # "correct" | "incorrect"
    probability: float    # P(incorrect)


def _one_hot(vectors) -> np.ndarray:
    data = _vote_matrix(vectors)
    n = data.shape[0]
    out = np.zeros((n, REGISTRY_SIZE * 3))
    rows = np.repeat(np.arange(n), REGISTRY_SIZE)
    cols = (np.tile(np.arange(REGISTRY_SIZE), n) * 3 + data.ravel())
    out[rows, cols] = 1.0
    return out


def train_classifier(vectors, labels, mode: TrainingMode = TrainingMode.WEAK,
                     seed: int = 0, threshold: float = 0.5) -> CorrectnessClassifier:
    """Fit the downstream correctness classifier.

    WEAK minimizes soft-label cross-entropy against probabilistic labels by
    duplicating each row with weights (p, 1-p); SUPERVISED uses {0,1} gold.
    """
    if len(vectors) != len(labels):
        raise FitError("vectors and labels must align")
    if len(vectors) < 20:
        raise FitError(f"need at least 20 training examples, got {len(vectors)}")
    x = _one_hot(vectors)
    y_arr = np.asarray(labels, dtype=float)
    if mode is TrainingMode.SUPERVISED:
        classes = set(np.unique(y_arr).tolist())
        if not classes <= {0.0, 1.0}:
            raise FitError("supervised labels must be 0/1 gold values")
        if len(classes) < 2:
            raise FitError("gold labels contain a single class; cannot fit")
        train_x, train_y, weights = x, y_arr, np.ones(len(y_arr))
    else:
        if np.any((y_arr < 0) | (y_arr > 1)):
            raise FitError("probabilistic labels must lie in [0, 1]")
        train_x = np.vstack([x, x])
        train_y = np.concatenate([np.ones(len(y_arr)), np.zeros(len(y_arr))])
        weights = np.concatenate([y_arr, 1.0 - y_arr])
        keep = weights > 1e-12
        train_x, train_y, weights = train_x[keep], train_y[keep], weights[keep]
        if len(set(train_y.tolist())) < 2:
            raise FitError("soft labels collapse to a single class; cannot fit")
    model = LogisticRegression(max_iter=2000, random_state=seed)
    model.fit(train_x, train_y, sample_weight=weights)
    return CorrectnessClassifier(
        weights=model.coef_[0].copy(),
        bias=float(model.intercept_[0]),
        threshold=threshold,
    )


def predict(classifier: CorrectnessClassifier, vec: DecisionVector) -> Prediction:
    """Verdict is incorrect iff P(incorrect) reaches the decision threshold."""
    p = classifier.probability(vec)
    verdict = "incorrect" if p >= classifier.threshold else "correct"
    return Prediction(verdict=verdict, probability=p)


# ---------------------------------------------------------------------------
# Confidence buckets


BUCKETS = ("high", "medium", "low")


def _bucket_assignment(params: LabelModelParams) -> dict:
    """Rank labelers by accuracy; tertile split; equal scores share the best bucket."""
    n = len(params.labeler_ids)
    scored = sorted(
        range(n),
        key=lambda j: (-params.accuracy(j), j),  # ties keep registry order
    )
    third = n / 3.0
    raw = {}
    for rank, j in enumerate(scored):
        raw[j] = min(int(rank // third), 2)
    by_score: dict[float, list] = {}
    for j in range(n):
        by_score.setdefault(round(params.accuracy(j), 12), []).append(j)
    assignment = {}
    for group in by_score.values():
        best = min(raw[j] for j in group)
        for j in group:
            assignment[j] = BUCKETS[best]
    return assignment


def confidence_bucket(params: LabelModelParams, signal_id) -> str:
    """Bucket of one labeler under the fitted model: high, medium, or low."""
    return _bucket_assignment(params)[labeler_index(signal_id)]


def default_label_model(prior: float = 0.5) -> LabelModelParams:
    """A frozen, plausible accuracy profile for detection without a fitted corpus.

    Execution-grounded signals sit at the top, structural heuristics at the
    bottom, positive labelers last (they never vote incorrect).
    """
    table = {
        Signal.ABNORMAL_RESULT: 0.97,
        Signal.EMPTY_PREDICATE: 0.92,
        Signal.SUBOPTIMAL_JOIN_TREE: 0.90,
        Signal.INCORRECT_JOIN_PREDICATE: 0.88,
        Signal.INCORRECT_SUBQUERY_FILTER: 0.86,
        Signal.VALUE_AMBIGUITY: 0.84,
        Signal.EVIDENCE_VIOLATION: 0.80,
        Signal.INSUFFICIENT_EVIDENCE: 0.75,
        Signal.COLUMN_AMBIGUITY: 0.70,
        Signal.LLM_SELF_CHECK: 0.65,
        Signal.QUESTION_CLAUSE_LINKING: 0.62,
        Signal.TABLE_SIMILARITY: 0.60,
        Signal.UNNECESSARY_SUBQUERY: 0.55,
        Signal.INCORRECT_GROUPBY: 0.50,
    }
    inc, cor, abstain = (_VOTE_INDEX[Vote.VOTE_INCORRECT],
                         _VOTE_INDEX[Vote.VOTE_CORRECT],
                         _VOTE_INDEX[Vote.ABSTAIN])
    emissions = np.zeros((REGISTRY_SIZE, 2, 3))
    for signal, acc in table.items():
        j = labeler_index(signal)
        emissions[j, 0, inc] = acc
        emissions[j, 0, abstain] = 1.0 - acc
        emissions[j, 1, inc] = (1.0 - acc) * 0.3
        emissions[j, 1, abstain] = 1.0 - emissions[j, 1, inc]
    for lid in POSITIVE_LABELERS:
        j = labeler_index(lid)
        emissions[j, 0, cor] = 0.3
        emissions[j, 0, abstain] = 0.7
        emissions[j, 1, cor] = 0.8
        emissions[j, 1, abstain] = 0.2
    return LabelModelParams(class_prior=prior, emissions=emissions,
                            ll_trace=[], iterations=0)


# ---------------------------------------------------------------------------
# Serialization


def save_label_model(params: LabelModelParams, path) -> None:
    doc = {
        "version": PARAMS_FORMAT_VERSION,
        "kind": "label_model",
        "labeler_ids": list(params.labeler_ids),
        "vote_order": [v.value for v in VOTE_ORDER],
        "class_prior": params.class_prior,
        "emissions": params.emissions.tolist(),
        "iterations": params.iterations,
        "ll_trace": params.ll_trace,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_label_model(path) -> LabelModelParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != PARAMS_FORMAT_VERSION or doc.get("kind") != "label_model":
        raise ValueError("not a recognized label model file")
    return LabelModelParams(
        class_prior=doc["class_prior"],
        emissions=np.asarray(doc["emissions"]),
        ll_trace=doc.get("ll_trace", []),
        iterations=doc.get("iterations", 0),
        labeler_ids=tuple(doc["labeler_ids"]),
    )


def save_classifier(classifier: CorrectnessClassifier, path) -> None:
    doc = {
        "version": PARAMS_FORMAT_VERSION,
        "kind": "classifier",
        "labeler_ids": list(classifier.labeler_ids),
        "weights": classifier.weights.tolist(),
        "bias": classifier.bias,
        "threshold": classifier.threshold,
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_classifier(path) -> CorrectnessClassifier:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != PARAMS_FORMAT_VERSION or doc.get("kind") != "classifier":
        raise ValueError("not a recognized classifier file")
    return CorrectnessClassifier(
        weights=np.asarray(doc["weights"]),
        bias=doc["bias"],
        threshold=doc["threshold"],
        labeler_ids=tuple(doc["labeler_ids"]),
    )
