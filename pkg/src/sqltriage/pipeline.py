"""End-to-end detection: signals -> votes -> probabilistic verdict -> reports.

The pipeline owns everything needed to judge one query against one database:
a catalog, execution limits, an optional completion client for the LLM
signals, and a label model (fitted or the frozen default) for confidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from sqltriage.aggregator import (
    CorrectnessClassifier,
    DecisionVector,
    LabelModelParams,
    build_decision_vector,
    confidence_bucket,
    default_label_model,
    posterior,
)
from sqltriage.catalog import DatabaseCatalog
from sqltriage.db_signals import run_db_signals
from sqltriage.exec_probe import ExecLimits
from sqltriage.llm_signals import (
    RunMode,
    SelfCheckMode,
    build_prompt_context,
    run_llm_signals,
)
from sqltriage.query_model import parse
from sqltriage.reporting import assemble_report, rank_reports
from sqltriage.signals import (
    ALL_SIGNALS,
    DB_SIGNALS,
    DetectionContext,
    LLM_SIGNALS,
    SignalThresholds,
)


@dataclass
class DetectionResult:
    query_id: str
    sql: str
    parse_ok: bool
    outcomes: list
    vector: DecisionVector
    p_incorrect: float
    verdict: str                       # "correct" | "incorrect"
    reports: list                      # ranked ErrorReports for flagged signals

    @property
    def flagged_signals(self) -> list:
        return [o.signal_id for o in self.outcomes if o.flagged]


@dataclass
class DetectionPipeline:
    """Reusable detector for one database."""

    catalog: DatabaseCatalog
    db: object                                      # path or sqlite3.Connection
    client: object | None = None                    # completion client, if any
    label_model: LabelModelParams = field(default_factory=default_label_model)
    classifier: CorrectnessClassifier | None = None
    enabled_signals: tuple = ALL_SIGNALS
    thresholds: SignalThresholds = field(default_factory=SignalThresholds)
    limits: ExecLimits = field(default_factory=ExecLimits)
    llm_run_mode: RunMode = RunMode.PER_SIGNAL
    self_check_mode: SelfCheckMode = SelfCheckMode.BOOL
    sample_values: dict | None = None
    decision_threshold: float = 0.5

    def run_signals(self, question: str, sql: str, evidence: str = "",
                    enabled=None, sq=None) -> list:
        """Signal outcomes in registry order; LLM signals need a client."""
        enabled = set(self.enabled_signals if enabled is None else enabled)
        sq = sq if sq is not None else parse(sql, self.catalog)
        ctx = DetectionContext(
            question=question, sq=sq, catalog=self.catalog, db=self.db,
            evidence=evidence or None, limits=self.limits,
            thresholds=self.thresholds,
        )
        outcomes = run_db_signals(ctx, enabled=enabled & set(DB_SIGNALS))
        llm_enabled = enabled & set(LLM_SIGNALS)
        if llm_enabled and self.client is not None:
            prompt_ctx = build_prompt_context(
                question, evidence, self.catalog, sql, self.sample_values,
            )
            outcomes.extend(run_llm_signals(
                prompt_ctx, self.client, enabled=llm_enabled,
                mode=self.llm_run_mode, self_check_mode=self.self_check_mode,
            ))
        return outcomes

    def detect(self, question: str, sql: str, evidence: str = "",
               query_id: str = "", enabled=None) -> DetectionResult:
        """Full verdict for one query: outcomes, probability, ranked reports."""
        sq = parse(sql, self.catalog)
        outcomes = self.run_signals(question, sql, evidence, enabled=enabled, sq=sq)
        vector = build_decision_vector(outcomes, query_id=query_id)
        if self.classifier is not None:
            p = self.classifier.probability(vector)
            threshold = self.classifier.threshold
        else:
            p = posterior(self.label_model, vector)
            threshold = self.decision_threshold
        reports = rank_reports([
            assemble_report(o, confidence_bucket(self.label_model, o.signal_id))
            for o in outcomes if o.flagged
        ])
        return DetectionResult(
            query_id=query_id,
            sql=sql,
            parse_ok=sq.parse_ok,
            outcomes=outcomes,
            vector=vector,
            p_incorrect=p,
            verdict="incorrect" if p >= threshold else "correct",
            reports=reports,
        )
