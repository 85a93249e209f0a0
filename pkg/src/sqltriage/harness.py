"""Dataset loading, gold labeling, and evaluation of detection and correction.

Ground truth is execution-based: a predicted query is correct when its result
set matches the gold query's result set on the live database.  Detection is
scored with stratified cross-validation; correction is scored by counting
queries fixed and queries broken.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from sklearn.metrics import roc_auc_score
from sklearn.model_selection import StratifiedKFold

from sqltriage.aggregator import (
    TrainingMode,
    Vote,
    build_decision_vector,
    fit_label_model,
    labeler_index,
    posterior,
    predict,
    train_classifier,
)
from sqltriage.exec_probe import ExecError, ExecLimits, ResultTable, run
from sqltriage.signals import ALL_SIGNALS, Signal

FLOAT_TOLERANCE = 1e-6
_NULL = ("__null__",)


class LoadError(Exception):
    """Dataset or predictions file failed validation."""

    def __init__(self, message: str, records=()):
        super().__init__(message)
        self.records = list(records)


class EvalMode(str, Enum):
    WEAK = "WEAK"
    SUPERVISED = "SUPERVISED"
    SELF_EVAL_BOOL = "SELF_EVAL_BOOL"
    SELF_EVAL_PROB = "SELF_EVAL_PROB"


@dataclass(frozen=True)
class DatasetExample:
    query_id: str
    question: str
    db_id: str
    gold_sql: str
    predicted_sql: str
    evidence: str = ""
    generator_tag: str = "other"


def load_examples(dataset_path, predictions_path,
                  generator_tag: str = "other") -> list:
    """Join a question file with an id -> SQL predictions mapping."""
    dataset_doc = json.loads(Path(dataset_path).read_text(encoding="utf-8"))
    predictions_doc = json.loads(Path(predictions_path).read_text(encoding="utf-8"))
    if not isinstance(dataset_doc, list):
        raise LoadError("dataset file must contain a JSON array of records")
    if not isinstance(predictions_doc, dict):
        raise LoadError("predictions file must contain a JSON object of id -> SQL")
    if not predictions_doc:
        raise LoadError("predictions file is empty")
    bad = []
    examples = []
    missing = []
    for index, record in enumerate(dataset_doc):
        if not isinstance(record, dict):
            bad.append({"index": index, "error": "record is not an object"})
            continue
        missing_fields = [k for k in ("question", "db_id", "SQL") if k not in record]
        if missing_fields:
            bad.append({"index": index,
                        "error": f"missing fields: {missing_fields}"})
            continue
        query_id = str(record.get("question_id", index))
        predicted = predictions_doc.get(query_id)
        if predicted is None:
            missing.append(query_id)
            continue
        if not isinstance(predicted, str):
            bad.append({"index": index,
                        "error": f"prediction for {query_id} is not a string"})
            continue
        examples.append(DatasetExample(
            query_id=query_id,
            question=str(record["question"]),
            evidence=str(record.get("evidence", "") or ""),
            db_id=str(record["db_id"]),
            gold_sql=str(record["SQL"]),
            predicted_sql=predicted,
            generator_tag=generator_tag,
        ))
    if bad:
        raise LoadError(f"{len(bad)} malformed dataset record(s)", records=bad)
    if missing:
        examples_note = ", ".join(missing[:10])
        print(f"warning: no prediction for {len(missing)} example(s): "
              f"{examples_note}{'...' if len(missing) > 10 else ''}")
    return examples


# ---------------------------------------------------------------------------
# Execution-grounded gold labels


def _normalize_value(value):
    if value is None:
        return _NULL
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ("__nan__",)
        if math.isinf(value):
            return ("__inf__", value > 0)
        if value.is_integer() and abs(value) < 2 ** 53:
            return int(value)
        return ("__f__", round(value / FLOAT_TOLERANCE))
    return value


def _normalize_rows(table: ResultTable) -> list:
    return [tuple(_normalize_value(v) for v in row) for row in table.rows]


def result_sets_equal(a: ResultTable, b: ResultTable,
                      multiset: bool = False) -> bool:
    """Row-order-insensitive result equality with numeric normalization.

    Rows compare as sets by default (duplicates collapse); multiset=True
    compares exact row multiplicities.  Column order stays significant.
    """
    rows_a, rows_b = _normalize_rows(a), _normalize_rows(b)
    if multiset:
        return Counter(rows_a) == Counter(rows_b)
    return set(rows_a) == set(rows_b)


def label_semantic_correctness(example: DatasetExample, db,
                               limits: ExecLimits | None = None,
                               multiset: bool = False) -> str:
    """correct | incorrect by result comparison; invalid when it cannot run."""
    limits = limits or ExecLimits()
    try:
        predicted = run(db, example.predicted_sql, limits)
    except ExecError:
        return "invalid"
    try:
        gold = run(db, example.gold_sql, limits)
    except ExecError as exc:
        raise ValueError(
            f"gold SQL for {example.query_id} failed to execute: {exc}") from exc
    return "correct" if result_sets_equal(predicted, gold, multiset=multiset) \
        else "incorrect"


# ---------------------------------------------------------------------------
# Detection evaluation


@dataclass
class DetectionEval:
    mode: str
    folds: int
    per_fold: dict = field(default_factory=dict)   # metric -> list by fold
    mean: dict = field(default_factory=dict)
    std: dict = field(default_factory=dict)
    n_examples: int = 0
    n_excluded_invalid: int = 0


@dataclass
class CorrectionEval:
    initial_acc: float
    final_acc: float
    delta_acc: float            # n_net / n_examples
    delta_acc_fix: float        # n_fix / n_examples (assume-all-incorrect view)
    n_fix: int
    n_break: int
    n_net: int
    n_examples: int
    transitions: dict = field(default_factory=dict)


@dataclass
class SignalBenchRow:
    signal: Signal
    flagged_total: int
    n_w: int                    # flagged and incorrect
    precision: float | None
    recall: float
    note: str = ""


@dataclass
class EvalSummary:
    detection: DetectionEval | None = None
    correction: CorrectionEval | None = None
    per_signal: list = field(default_factory=list)


def _binary_metrics(y_true: np.ndarray, y_pred: np.ndarray,
                    scores: np.ndarray | None) -> dict:
    tp = int(np.sum((y_pred == 1) & (y_true == 1)))
    fp = int(np.sum((y_pred == 1) & (y_true == 0)))
    fn = int(np.sum((y_pred == 0) & (y_true == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall else 0.0)
    metrics = {
        "accuracy": float(np.mean(y_pred == y_true)),
        "precision": precision,
        "recall": recall,
        "f1": f1,
    }
    if scores is not None and len(set(y_true.tolist())) == 2:
        metrics["auc"] = float(roc_auc_score(y_true, scores))
    return metrics


def _self_check_prob(vector, probs: dict | None, query_id: str) -> float:
    if probs and query_id in probs:
        return float(probs[query_id])
    vote = vector.votes[labeler_index(Signal.LLM_SELF_CHECK)]
    return 0.25 if vote is Vote.VOTE_INCORRECT else 0.75


def eval_detection_from_vectors(vectors, labels, mode: EvalMode = EvalMode.WEAK,
                                folds: int = 5, seed: int = 0,
                                self_check_probs: dict | None = None) -> DetectionEval:
    """Cross-validated detection metrics over precomputed decision vectors.

    labels are gold {0 correct, 1 incorrect}; order pairs with vectors.
    self_check_probs maps query_id -> model probability of correctness, used
    only by SELF_EVAL_PROB.
    """
    if len(vectors) != len(labels):
        raise ValueError("vectors and labels must align")
    y = np.asarray(labels, dtype=int)
    order = np.argsort([v.query_id for v in vectors], kind="stable")
    vectors = [vectors[i] for i in order]
    y = y[order]
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    per_fold: dict[str, list] = {}
    for train_idx, test_idx in splitter.split(np.zeros(len(y)), y):
        train_vecs = [vectors[i] for i in train_idx]
        test_vecs = [vectors[i] for i in test_idx]
        y_test = y[test_idx]
        if mode is EvalMode.WEAK:
            params = fit_label_model(train_vecs)
            soft = [posterior(params, v) for v in train_vecs]
            clf = train_classifier(train_vecs, soft, TrainingMode.WEAK, seed=seed)
            preds = [predict(clf, v) for v in test_vecs]
            y_pred = np.array([1 if p.verdict == "incorrect" else 0 for p in preds])
            scores = np.array([p.probability for p in preds])
        elif mode is EvalMode.SUPERVISED:
            clf = train_classifier(train_vecs, y[train_idx].tolist(),
                                   TrainingMode.SUPERVISED, seed=seed)
            preds = [predict(clf, v) for v in test_vecs]
            y_pred = np.array([1 if p.verdict == "incorrect" else 0 for p in preds])
            scores = np.array([p.probability for p in preds])
        elif mode is EvalMode.SELF_EVAL_BOOL:
            idx = labeler_index(Signal.LLM_SELF_CHECK)
            y_pred = np.array([
                1 if v.votes[idx] is Vote.VOTE_INCORRECT else 0 for v in test_vecs
            ])
            scores = None      # verdict is boolean; no threshold sweep exists
        else:
            probs = np.array([
                _self_check_prob(v, self_check_probs, v.query_id)
                for v in test_vecs
            ])
            y_pred = (probs < 0.5).astype(int)
            scores = 1.0 - probs
        for name, value in _binary_metrics(y_test, y_pred, scores).items():
            per_fold.setdefault(name, []).append(value)
    return DetectionEval(
        mode=mode.value,
        folds=folds,
        per_fold=per_fold,
        mean={k: float(np.mean(v)) for k, v in per_fold.items()},
        std={k: float(np.std(v)) for k, v in per_fold.items()},
        n_examples=len(vectors),
    )


def collect_vectors(examples, pipelines, limits: ExecLimits | None = None,
                    max_workers: int = 1):
    """Run signals and gold labeling for every example.

    pipelines maps db_id -> DetectionPipeline (a single pipeline is accepted
    for single-database corpora).  Returns (vectors, labels {0,1},
    self_check_probs, kept_examples, n_invalid); invalid predictions are
    dropped here, the detection-eval convention.
    """
    limits = limits or ExecLimits()

    def pipeline_for(db_id: str):
        if hasattr(pipelines, "detect"):
            return pipelines
        return pipelines[db_id]

    def work(example: DatasetExample):
        pipe = pipeline_for(example.db_id)
        label = label_semantic_correctness(example, pipe.db, limits)
        if label == "invalid":
            return example, None, None, None
        outcomes = pipe.run_signals(example.question, example.predicted_sql,
                                    example.evidence)
        vector = build_decision_vector(outcomes, query_id=example.query_id)
        prob = None
        for o in outcomes:
            if o.signal_id is Signal.LLM_SELF_CHECK and "probability" in o.raw_evidence:
                prob = float(o.raw_evidence["probability"])
        return example, vector, 1 if label == "incorrect" else 0, prob

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(work, examples))
    else:
        results = [work(e) for e in examples]
    vectors, labels, probs, kept = [], [], {}, []
    n_invalid = 0
    for example, vector, label, prob in results:
        if vector is None:
            n_invalid += 1
            continue
        kept.append(example)
        vectors.append(vector)
        labels.append(label)
        if prob is not None:
            probs[example.query_id] = prob
    return vectors, labels, probs, kept, n_invalid


def eval_detection(examples, pipelines, mode: EvalMode = EvalMode.WEAK,
                   folds: int = 5, seed: int = 0,
                   limits: ExecLimits | None = None,
                   max_workers: int = 1) -> DetectionEval:
    """End-to-end detection evaluation on a labeled corpus."""
    vectors, labels, probs, _, n_invalid = collect_vectors(
        examples, pipelines, limits, max_workers)
    summary = eval_detection_from_vectors(
        vectors, labels, mode=mode, folds=folds, seed=seed,
        self_check_probs=probs,
    )
    summary.n_excluded_invalid = n_invalid
    return summary


# ---------------------------------------------------------------------------
# Correction evaluation


def eval_correction(examples, corrector_fn, dbs,
                    limits: ExecLimits | None = None,
                    multiset: bool = False) -> CorrectionEval:
    """Tally fixed/broken transitions under a correction function.

    corrector_fn(example) -> final SQL; dbs maps db_id -> database (a single
    database is accepted).  Invalid predictions count as incorrect here.
    """
    limits = limits or ExecLimits()

    def db_for(db_id: str):
        return dbs[db_id] if isinstance(dbs, dict) else dbs

    n_fix = n_break = n_initial_correct = n_final_correct = 0
    transitions: Counter = Counter()
    for example in examples:
        db = db_for(example.db_id)
        before = label_semantic_correctness(example, db, limits, multiset)
        final_sql = corrector_fn(example)
        after_example = DatasetExample(
            query_id=example.query_id, question=example.question,
            db_id=example.db_id, gold_sql=example.gold_sql,
            predicted_sql=final_sql, evidence=example.evidence,
            generator_tag=example.generator_tag,
        )
        after = label_semantic_correctness(after_example, db, limits, multiset)
        transitions[f"{before}->{after}"] += 1
        if before == "correct":
            n_initial_correct += 1
        if after == "correct":
            n_final_correct += 1
        if before != "correct" and after == "correct":
            n_fix += 1
        if before == "correct" and after != "correct":
            n_break += 1
    n = len(examples)
    n_net = n_fix - n_break
    return CorrectionEval(
        initial_acc=n_initial_correct / n if n else 0.0,
        final_acc=n_final_correct / n if n else 0.0,
        delta_acc=n_net / n if n else 0.0,
        delta_acc_fix=n_fix / n if n else 0.0,
        n_fix=n_fix,
        n_break=n_break,
        n_net=n_net,
        n_examples=n,
        transitions=dict(transitions),
    )


# ---------------------------------------------------------------------------
# Per-signal microbenchmark


def signal_microbench(examples, pipelines, signals=None,
                      limits: ExecLimits | None = None,
                      max_workers: int = 1) -> list:
    """Per-signal precision/recall/n_w over a labeled corpus."""
    signals = tuple(signals) if signals is not None else ALL_SIGNALS
    vectors, labels, _, _, _ = collect_vectors(examples, pipelines, limits,
                                               max_workers)
    y = np.asarray(labels, dtype=int)
    total_incorrect = int(y.sum())
    rows = []
    for signal in signals:
        idx = labeler_index(signal)
        flagged = np.array([
            v.votes[idx] is Vote.VOTE_INCORRECT for v in vectors
        ])
        flagged_total = int(flagged.sum())
        n_w = int(np.sum(flagged & (y == 1)))
        if flagged_total == 0:
            rows.append(SignalBenchRow(
                signal=signal, flagged_total=0, n_w=0, precision=None,
                recall=0.0, note="No queries detected",
            ))
            continue
        rows.append(SignalBenchRow(
            signal=signal,
            flagged_total=flagged_total,
            n_w=n_w,
            precision=n_w / flagged_total,
            recall=n_w / total_incorrect if total_incorrect else 0.0,
        ))
    return rows


# ---------------------------------------------------------------------------
# Run directory


def write_run_summary(run_dir, config_snapshot: dict, summary: EvalSummary,
                      catalog_digests: dict | None = None) -> None:
    """Persist config snapshot plus JSON and CSV summaries under run_dir."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    snapshot = dict(config_snapshot)
    if catalog_digests:
        snapshot["catalog_digests"] = catalog_digests
    (run_dir / "config.json").write_text(
        json.dumps(snapshot, indent=2, default=str) + "\n", encoding="utf-8")
    doc: dict = {}
    if summary.detection is not None:
        d = summary.detection
        doc["detection"] = {
            "mode": d.mode, "folds": d.folds, "mean": d.mean, "std": d.std,
            "per_fold": d.per_fold, "n_examples": d.n_examples,
            "n_excluded_invalid": d.n_excluded_invalid,
        }
    if summary.correction is not None:
        c = summary.correction
        doc["correction"] = {
            "initial_acc": c.initial_acc, "final_acc": c.final_acc,
            "delta_acc": c.delta_acc, "delta_acc_fix": c.delta_acc_fix,
            "n_fix": c.n_fix, "n_break": c.n_break, "n_net": c.n_net,
            "n_examples": c.n_examples, "transitions": c.transitions,
        }
    if summary.per_signal:
        doc["per_signal"] = [
            {
                "signal": row.signal.value,
                "flagged_total": row.flagged_total,
                "n_w": row.n_w,
                "precision": row.precision,
                "recall": row.recall,
                "note": row.note,
            }
            for row in summary.per_signal
        ]
    (run_dir / "summary.json").write_text(
        json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    lines = ["section,metric,value"]
    if summary.detection is not None:
        for name, value in summary.detection.mean.items():
            lines.append(f"detection,{name}_mean,{value}")
        for name, value in summary.detection.std.items():
            lines.append(f"detection,{name}_std,{value}")
    if summary.correction is not None:
        c = summary.correction
        for name in ("initial_acc", "final_acc", "delta_acc", "delta_acc_fix",
                     "n_fix", "n_break", "n_net", "n_examples"):
            lines.append(f"correction,{name},{getattr(c, name)}")
    for row in summary.per_signal:
        label = row.signal.value
        precision = "" if row.precision is None else row.precision
        lines.append(f"signal:{label},precision,{precision}")
        lines.append(f"signal:{label},recall,{row.recall}")
        lines.append(f"signal:{label},n_w,{row.n_w}")
    (run_dir / "summary.csv").write_text("\n".join(lines) + "\n",
                                         encoding="utf-8")
