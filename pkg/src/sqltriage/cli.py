"""Command-line surface: catalog building, detection, correction, evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 completion-backend
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from sqltriage.aggregator import FitError
from sqltriage.catalog import (
    BuildOptions,
    build_catalog,
    catalog_digest,
    load_catalog,
    load_supplemental_fks,
    save_catalog,
)
from sqltriage.completion import (
    CompletionError,
    HTTPCompletionClient,
    MockCompletionClient,
    MockRule,
    PromptTrace,
)
from sqltriage.config import AppConfig, ConfigError, config_snapshot, load_config, parse_signal, parse_signal_list
from sqltriage.corrector import CorrectionConfig, run_correction, save_trace
from sqltriage.exec_probe import ExecError
from sqltriage.harness import (
    EvalMode,
    EvalSummary,
    LoadError,
    eval_correction,
    eval_detection,
    load_examples,
    signal_microbench,
    write_run_summary,
)
from sqltriage.pipeline import DetectionPipeline
from sqltriage.reporting import report_mapping
from sqltriage.signals import Signal

USAGE_ERROR = 1
DATA_ERROR = 2
BACKEND_ERROR = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage by default; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _add_common_io(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("dataset", help="BIRD-style JSON array of questions")
    sub.add_argument("predictions", help="JSON object mapping id -> SQL")
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--db", help="path to the single SQLite database")
    group.add_argument("--db-root",
                       help="directory holding <db_id>/<db_id>.sqlite databases")
    sub.add_argument("--config", help="JSON or TOML config file")
    sub.add_argument("--signals",
                     help="comma-separated signal subset (default: all enabled)")
    sub.add_argument("--llm-backend", help="chat-completions endpoint URL")
    sub.add_argument("--model", help="model name for the HTTP backend")
    sub.add_argument("--token-env", help="environment variable holding the API token")
    sub.add_argument("--mock-script",
                     help="JSON file of canned completions (deterministic runs)")
    sub.add_argument("--out", help="run directory (default runs/<command>-<time>)")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker pool size for example evaluation")
    sub.add_argument("--generator-tag", default="other",
                     help="provenance tag recorded on loaded examples")


def build_arg_parser() -> _Parser:
    parser = _Parser(
        prog="sqltriage",
        description="Detect and correct clause-level semantic errors in "
                    "LLM-generated SQL.",
    )
    commands = parser.add_subparsers(dest="command", required=True,
                                     parser_class=_Parser)

    p = commands.add_parser("build-catalog", help="index a SQLite database")
    p.add_argument("db", help="path to the SQLite database")
    p.add_argument("--out", help="output catalog JSON path")
    p.add_argument("--db-id", help="database identifier (default: file stem)")
    p.add_argument("--fk-file",
                   help="supplemental foreign keys JSON: [{child, parent}]")

    p = commands.add_parser("detect", help="report per-query error signals")
    _add_common_io(p)

    p = commands.add_parser("fix", help="iteratively correct flagged queries")
    _add_common_io(p)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--guardrail", default=None,
                   help="guardrail signal name, or 'none' to disable")
    p.add_argument("--no-auditor", action="store_true")
    p.add_argument("--no-selector", action="store_true")

    p = commands.add_parser("eval-detect", help="cross-validated detection metrics")
    _add_common_io(p)
    p.add_argument("--mode", default="weak",
                   choices=["weak", "supervised", "self-bool", "self-prob"])
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)

    p = commands.add_parser("eval-fix", help="correction fix/break accounting")
    _add_common_io(p)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--guardrail", default=None)
    p.add_argument("--no-auditor", action="store_true")
    p.add_argument("--no-selector", action="store_true")

    p = commands.add_parser("signal-bench", help="per-signal precision/recall")
    _add_common_io(p)
    return parser


_MODE_NAMES = {
    "weak": EvalMode.WEAK,
    "supervised": EvalMode.SUPERVISED,
    "self-bool": EvalMode.SELF_EVAL_BOOL,
    "self-prob": EvalMode.SELF_EVAL_PROB,
}


def _load_app_config(args) -> AppConfig:
    config = load_config(getattr(args, "config", None))
    if getattr(args, "signals", None):
        config.enabled_signals = parse_signal_list(args.signals)
    if getattr(args, "llm_backend", None):
        config.backend.url = args.llm_backend
    if getattr(args, "model", None):
        config.backend.model = args.model
    if getattr(args, "token_env", None):
        config.backend.token_env_var = args.token_env
    if getattr(args, "folds", None) is not None:
        config.folds = args.folds
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "workers", None) is not None:
        config.max_workers = args.workers
    if getattr(args, "max_iter", None) is not None:
        config.correction.max_iter = args.max_iter
    guardrail = getattr(args, "guardrail", None)
    if guardrail is not None:
        config.correction.guardrail_signal = (
            None if guardrail.lower() == "none" else parse_signal(guardrail).value
        )
    if getattr(args, "no_auditor", False):
        config.correction.auditor_enabled = False
    if getattr(args, "no_selector", False):
        config.correction.selector_enabled = False
    return config


def _build_client(args, config: AppConfig, trace: PromptTrace | None):
    script_path = getattr(args, "mock_script", None)
    if script_path:
        doc = json.loads(Path(script_path).read_text(encoding="utf-8"))
        if isinstance(doc, list):
            return MockCompletionClient(script=doc, trace=trace)
        return MockCompletionClient(
            script=doc.get("script", []),
            rules=[MockRule(r["pattern"], r["response"])
                   for r in doc.get("rules", [])],
            default=doc.get("default"),
            trace=trace,
        )
    if config.backend.configured:
        return HTTPCompletionClient(
            url=config.backend.url,
            model=config.backend.model,
            token_env_var=config.backend.token_env_var,
            trace=trace,
        )
    return None


def _db_path_for(args, db_id: str) -> Path:
    if args.db:
        return Path(args.db)
    root = Path(args.db_root)
    for suffix in (".sqlite", ".db"):
        candidate = root / db_id / f"{db_id}{suffix}"
        if candidate.exists():
            return candidate
    raise LoadError(f"no database found for db_id {db_id!r} under {root}")


class _PipelineRegistry:
    """Lazily builds one DetectionPipeline per db_id."""

    def __init__(self, args, config: AppConfig, client):
        self.args = args
        self.config = config
        self.client = client
        self._pipelines: dict[str, DetectionPipeline] = {}

    def __getitem__(self, db_id: str) -> DetectionPipeline:
        if db_id not in self._pipelines:
            path = _db_path_for(self.args, db_id)
            catalog = build_catalog(path, db_id=db_id)
            self._pipelines[db_id] = DetectionPipeline(
                catalog=catalog,
                db=str(path),
                client=self.client,
                enabled_signals=self.config.enabled_signals,
                thresholds=self.config.thresholds,
                limits=self.config.limits,
                llm_run_mode=self.config.llm_run_mode,
                self_check_mode=self.config.self_check_mode,
                decision_threshold=self.config.decision_threshold,
            )
        return self._pipelines[db_id]

    def digests(self) -> dict:
        return {db_id: catalog_digest(p.catalog)
                for db_id, p in self._pipelines.items()}


def _run_dir(args, command: str) -> Path:
    if getattr(args, "out", None):
        path = Path(args.out)
    else:
        path = Path("runs") / f"{command}-{int(time.time())}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _cmd_build_catalog(args) -> int:
    db = Path(args.db)
    if not db.exists():
        print(f"error: database not found: {db}", file=sys.stderr)
        return DATA_ERROR
    options = BuildOptions()
    if args.fk_file:
        options = BuildOptions(
            supplemental_fk_edges=load_supplemental_fks(args.fk_file))
    catalog = build_catalog(db, options=options, db_id=args.db_id or db.stem)
    out = Path(args.out) if args.out else db.with_suffix(".catalog.json")
    save_catalog(catalog, out)
    print(f"catalog for {catalog.db_id}: {len(catalog.tables)} tables, "
          f"{len(catalog.fk_edges)} fk edges, "
          f"{len(catalog.derived_edges)} derived edges, "
          f"{len(catalog.value_index)} indexed values")
    print(f"digest {catalog_digest(catalog)}")
    print(f"wrote {out}")
    return 0


def _cmd_detect(args) -> int:
    config = _load_app_config(args)
    run_dir = _run_dir(args, "detect")
    trace = PromptTrace(run_dir / "prompt_trace.jsonl")
    client = _build_client(args, config, trace)
    registry = _PipelineRegistry(args, config, client)
    examples = load_examples(args.dataset, args.predictions,
                             generator_tag=args.generator_tag)
    outcome_dir = run_dir / "queries"
    outcome_dir.mkdir(exist_ok=True)
    flagged_count = 0
    for example in examples:
        pipeline = registry[example.db_id]
        result = pipeline.detect(example.question, example.predicted_sql,
                                 example.evidence, query_id=example.query_id)
        doc = {
            "query_id": example.query_id,
            "db_id": example.db_id,
            "sql": example.predicted_sql,
            "parse_ok": result.parse_ok,
            "verdict": result.verdict,
            "p_incorrect": result.p_incorrect,
            "flagged_signals": [s.value for s in result.flagged_signals],
            "reports": [report_mapping(r) for r in result.reports],
        }
        (outcome_dir / f"{example.query_id}.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        if result.flagged_signals:
            flagged_count += 1
        flags = ", ".join(s.value for s in result.flagged_signals) or "-"
        print(f"{example.query_id}\t{result.verdict}\t"
              f"p={result.p_incorrect:.3f}\t{flags}")
    write_run_summary(run_dir, config_snapshot(config), EvalSummary(),
                      catalog_digests=registry.digests())
    print(f"{flagged_count}/{len(examples)} queries flagged; "
          f"outputs under {run_dir}")
    return 0


def _correction_config(config: AppConfig) -> CorrectionConfig:
    guardrail = config.correction.guardrail_signal
    return CorrectionConfig(
        max_iter=config.correction.max_iter,
        guardrail_signal=Signal(guardrail) if guardrail else None,
        enabled_signals=config.enabled_signals,
        syntax_repair_budget=config.correction.syntax_repair_budget,
        auditor_enabled=config.correction.auditor_enabled,
        selector_enabled=config.correction.selector_enabled,
    )


def _cmd_fix(args) -> int:
    config = _load_app_config(args)
    run_dir = _run_dir(args, "fix")
    trace = PromptTrace(run_dir / "prompt_trace.jsonl")
    client = _build_client(args, config, trace)
    if client is None:
        print("error: correction needs --mock-script or a configured backend",
              file=sys.stderr)
        return BACKEND_ERROR
    registry = _PipelineRegistry(args, config, client)
    correction_config = _correction_config(config)
    examples = load_examples(args.dataset, args.predictions,
                             generator_tag=args.generator_tag)
    trace_dir = run_dir / "traces"
    trace_dir.mkdir(exist_ok=True)
    corrected: dict[str, str] = {}
    changed = 0
    for example in examples:
        pipeline = registry[example.db_id]
        result = run_correction(example.question, example.predicted_sql,
                                pipeline, client, correction_config,
                                evidence=example.evidence)
        corrected[example.query_id] = result.final_sql
        save_trace(result.trace, trace_dir / f"{example.query_id}.json")
        if result.final_sql != example.predicted_sql:
            changed += 1
        print(f"{example.query_id}\t"
              f"{'revised' if result.final_sql != example.predicted_sql else 'kept'}\t"
              f"iterations={len(result.trace.iterations)}")
    (run_dir / "corrected.json").write_text(
        json.dumps(corrected, indent=2) + "\n", encoding="utf-8")
    write_run_summary(run_dir, config_snapshot(config), EvalSummary(),
                      catalog_digests=registry.digests())
    print(f"{changed}/{len(examples)} queries revised; outputs under {run_dir}")
    return 0


def _cmd_eval_detect(args) -> int:
    config = _load_app_config(args)
    run_dir = _run_dir(args, "eval-detect")
    trace = PromptTrace(run_dir / "prompt_trace.jsonl")
    client = _build_client(args, config, trace)
    registry = _PipelineRegistry(args, config, client)
    examples = load_examples(args.dataset, args.predictions,
                             generator_tag=args.generator_tag)
    mode = _MODE_NAMES[args.mode]
    detection = eval_detection(
        examples, registry_adapter(registry), mode=mode, folds=config.folds,
        seed=config.seed, limits=config.limits, max_workers=config.max_workers,
    )
    write_run_summary(run_dir, config_snapshot(config),
                      EvalSummary(detection=detection),
                      catalog_digests=registry.digests())
    print(f"mode={detection.mode} folds={detection.folds} "
          f"n={detection.n_examples} invalid_excluded={detection.n_excluded_invalid}")
    for metric in ("accuracy", "auc", "precision", "recall", "f1"):
        if metric in detection.mean:
            print(f"{metric}: {detection.mean[metric]:.4f} "
                  f"± {detection.std[metric]:.4f}")
    print(f"outputs under {run_dir}")
    return 0


def registry_adapter(registry: _PipelineRegistry):
    """Expose the lazy registry through the mapping shape harness expects."""

    class _Adapter:
        def __getitem__(self, db_id: str):
            return registry[db_id]

    return _Adapter()


def _cmd_eval_fix(args) -> int:
    config = _load_app_config(args)
    run_dir = _run_dir(args, "eval-fix")
    trace = PromptTrace(run_dir / "prompt_trace.jsonl")
    client = _build_client(args, config, trace)
    if client is None:
        print("error: correction needs --mock-script or a configured backend",
              file=sys.stderr)
        return BACKEND_ERROR
    registry = _PipelineRegistry(args, config, client)
    correction_config = _correction_config(config)
    examples = load_examples(args.dataset, args.predictions,
                             generator_tag=args.generator_tag)
    trace_dir = run_dir / "traces"
    trace_dir.mkdir(exist_ok=True)

    def corrector_fn(example):
        pipeline = registry[example.db_id]
        result = run_correction(example.question, example.predicted_sql,
                                pipeline, client, correction_config,
                                evidence=example.evidence)
        save_trace(result.trace, trace_dir / f"{example.query_id}.json")
        return result.final_sql

    dbs = {e.db_id: str(_db_path_for(args, e.db_id)) for e in examples}
    correction = eval_correction(examples, corrector_fn, dbs,
                                 limits=config.limits,
                                 multiset=config.multiset_equality)
    write_run_summary(run_dir, config_snapshot(config),
                      EvalSummary(correction=correction),
                      catalog_digests=registry.digests())
    print(f"n={correction.n_examples} initial_acc={correction.initial_acc:.4f} "
          f"final_acc={correction.final_acc:.4f}")
    print(f"n_fix={correction.n_fix} n_break={correction.n_break} "
          f"n_net={correction.n_net} delta_acc={correction.delta_acc:.4f} "
          f"delta_acc_fix={correction.delta_acc_fix:.4f}")
    print(f"outputs under {run_dir}")
    return 0


def _cmd_signal_bench(args) -> int:
    config = _load_app_config(args)
    run_dir = _run_dir(args, "signal-bench")
    trace = PromptTrace(run_dir / "prompt_trace.jsonl")
    client = _build_client(args, config, trace)
    registry = _PipelineRegistry(args, config, client)
    examples = load_examples(args.dataset, args.predictions,
                             generator_tag=args.generator_tag)
    rows = signal_microbench(examples, registry_adapter(registry),
                             signals=config.enabled_signals,
                             limits=config.limits,
                             max_workers=config.max_workers)
    write_run_summary(run_dir, config_snapshot(config),
                      EvalSummary(per_signal=rows),
                      catalog_digests=registry.digests())
    for row in rows:
        if row.note:
            print(f"{row.signal.value}\t{row.note}")
        else:
            print(f"{row.signal.value}\tprecision={row.precision:.4f}\t"
                  f"recall={row.recall:.4f}\tn_w={row.n_w}")
    print(f"outputs under {run_dir}")
    return 0


_COMMANDS = {
    "build-catalog": _cmd_build_catalog,
    "detect": _cmd_detect,
    "fix": _cmd_fix,
    "eval-detect": _cmd_eval_detect,
    "eval-fix": _cmd_eval_fix,
    "signal-bench": _cmd_signal_bench,
}


def main(argv=None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:   # argparse help/usage paths
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, LoadError, FileNotFoundError, json.JSONDecodeError,
            ExecError, FitError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except CompletionError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return BACKEND_ERROR


if __name__ == "__main__":
    sys.exit(main())
