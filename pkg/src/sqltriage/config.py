"""Run configuration: thresholds, enabled signals, backend, limits, seeds.

Config files may be JSON or TOML; every field has a default so a partial
file (or none at all) still yields a usable configuration.
"""

from __future__ import annotations

import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from sqltriage.exec_probe import ExecLimits
from sqltriage.llm_signals import RunMode, SelfCheckMode
from sqltriage.signals import ALL_SIGNALS, Signal, SignalThresholds


class ConfigError(Exception):
    """Configuration file is malformed or holds invalid values."""


@dataclass
class BackendConfig:
    url: str = ""
    model: str = ""
    token_env_var: str = "SQLTRIAGE_API_TOKEN"

    @property
    def configured(self) -> bool:
        return bool(self.url and self.model)


@dataclass
class CorrectionSettings:
    max_iter: int = 5
    guardrail_signal: str | None = Signal.ABNORMAL_RESULT.value
    syntax_repair_budget: int = 3
    auditor_enabled: bool = True
    selector_enabled: bool = True


@dataclass
class AppConfig:
    enabled_signals: tuple = ALL_SIGNALS
    thresholds: SignalThresholds = field(default_factory=SignalThresholds)
    limits: ExecLimits = field(default_factory=ExecLimits)
    backend: BackendConfig = field(default_factory=BackendConfig)
    correction: CorrectionSettings = field(default_factory=CorrectionSettings)
    seed: int = 0
    folds: int = 5
    self_check_mode: SelfCheckMode = SelfCheckMode.BOOL
    llm_run_mode: RunMode = RunMode.PER_SIGNAL
    multiset_equality: bool = False
    decision_threshold: float = 0.5
    max_workers: int = 1


def parse_signal(name: str) -> Signal:
    try:
        return Signal(name.strip().lower())
    except ValueError:
        valid = ", ".join(s.value for s in ALL_SIGNALS)
        raise ConfigError(f"unknown signal {name!r}; valid: {valid}") from None


def parse_signal_list(names) -> tuple:
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    signals = [parse_signal(n) for n in names]
    if not signals:
        raise ConfigError("signal list is empty")
    return tuple(signals)


def _read_document(path: Path) -> dict:
    if path.suffix.lower() == ".toml":
        try:
            return tomllib.loads(path.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc


def load_config(path=None) -> AppConfig:
    """Build an AppConfig from a JSON or TOML file; None gives all defaults."""
    config = AppConfig()
    if path is None:
        return config
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    doc = _read_document(path)
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object/table")
    try:
        if "enabled_signals" in doc:
            config.enabled_signals = parse_signal_list(doc["enabled_signals"])
        thresholds = doc.get("thresholds", {})
        config.thresholds = SignalThresholds(
            min_group_size=int(thresholds.get(
                "min_group_size", config.thresholds.min_group_size)),
            subquery_threshold=int(thresholds.get(
                "subquery_threshold", config.thresholds.subquery_threshold)),
        )
        limits = doc.get("limits", {})
        config.limits = ExecLimits(
            timeout_ms=int(limits.get("timeout_ms", config.limits.timeout_ms)),
            max_rows=int(limits.get("max_rows", config.limits.max_rows)),
        )
        backend = doc.get("backend", {})
        config.backend = BackendConfig(
            url=str(backend.get("url", "")),
            model=str(backend.get("model", "")),
            token_env_var=str(backend.get("token_env_var",
                                          config.backend.token_env_var)),
        )
        correction = doc.get("correction", {})
        guardrail = correction.get(
            "guardrail_signal", config.correction.guardrail_signal)
        if guardrail is not None:
            guardrail = parse_signal(str(guardrail)).value
        config.correction = CorrectionSettings(
            max_iter=int(correction.get("max_iter",
                                        config.correction.max_iter)),
            guardrail_signal=guardrail,
            syntax_repair_budget=int(correction.get(
                "syntax_repair_budget", config.correction.syntax_repair_budget)),
            auditor_enabled=bool(correction.get(
                "auditor_enabled", config.correction.auditor_enabled)),
            selector_enabled=bool(correction.get(
                "selector_enabled", config.correction.selector_enabled)),
        )
        config.seed = int(doc.get("seed", config.seed))
        config.folds = int(doc.get("folds", config.folds))
        config.self_check_mode = SelfCheckMode(
            str(doc.get("self_check_mode", config.self_check_mode.value)).upper())
        config.llm_run_mode = RunMode(
            str(doc.get("llm_run_mode", config.llm_run_mode.value)).upper())
        config.multiset_equality = bool(doc.get("multiset_equality",
                                                config.multiset_equality))
        config.decision_threshold = float(doc.get("decision_threshold",
                                                  config.decision_threshold))
        config.max_workers = int(doc.get("max_workers", config.max_workers))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config value: {exc}") from exc
    return config


def config_snapshot(config: AppConfig) -> dict:
    """JSON-serializable view of the effective configuration."""
    return {
        "enabled_signals": [s.value for s in config.enabled_signals],
        "thresholds": {
            "min_group_size": config.thresholds.min_group_size,
            "subquery_threshold": config.thresholds.subquery_threshold,
        },
        "limits": {
            "timeout_ms": config.limits.timeout_ms,
            "max_rows": config.limits.max_rows,
        },
        "backend": {
            "url": config.backend.url,
            "model": config.backend.model,
            "token_env_var": config.backend.token_env_var,
        },
        "correction": {
            "max_iter": config.correction.max_iter,
            "guardrail_signal": config.correction.guardrail_signal,
            "syntax_repair_budget": config.correction.syntax_repair_budget,
            "auditor_enabled": config.correction.auditor_enabled,
            "selector_enabled": config.correction.selector_enabled,
        },
        "seed": config.seed,
        "folds": config.folds,
        "self_check_mode": config.self_check_mode.value,
        "llm_run_mode": config.llm_run_mode.value,
        "multiset_equality": config.multiset_equality,
        "decision_threshold": config.decision_threshold,
        "max_workers": config.max_workers,
    }
