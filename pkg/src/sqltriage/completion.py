"""Pluggable LLM completion clients: a deterministic mock and an HTTP backend.

Every prompt and response passes through an optional JSON-lines trace so any
detection or correction run can be audited and replayed.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol


class CompletionError(Exception):
    """Raised when a completion backend cannot produce a response."""


@dataclass(frozen=True)
class CompletionParams:
    temperature: float = 0.0
    max_tokens: int = 4096


class PromptTrace:
    """Thread-safe JSON-lines audit log of prompts and responses."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def log(self, client: str, kind: str, payload: str) -> None:
        record = {
            "time": time.time(),
            "client": client,
            "kind": kind,          # request | response | error
            "payload": payload,    # verbatim body
        }
        with self._lock:
            self.records.append(record)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record) + "\n")


class CompletionClient(Protocol):
    """Contract every completion backend satisfies."""

    name: str

    def complete(self, prompt: str, params: CompletionParams | None = None) -> str:
        ...


@dataclass
class MockRule:
    """Canned response for any prompt matching a regex pattern."""

    pattern: str
    response: str

    def matches(self, prompt: str) -> bool:
        return re.search(self.pattern, prompt, re.DOTALL) is not None


class MockCompletionClient:
    """Deterministic stand-in client for tests and offline runs.

    Resolution order: scripted queue first (FIFO), then the first matching
    pattern rule, then the default response.  `fail_always` or a queued
    CompletionError simulates backend failure for downgrade-safety tests.
    """

    def __init__(self, rules=(), script=(), default: str | None = None,
                 fail_always: bool = False, trace: PromptTrace | None = None,
                 name: str = "mock"):
        self.name = name
        self.rules = list(rules)
        self.script = list(script)
        self.default = default
        self.fail_always = fail_always
        self.trace = trace
        self.calls: list[str] = []
        self._lock = threading.Lock()

    def complete(self, prompt: str, params: CompletionParams | None = None) -> str:
        with self._lock:
            self.calls.append(prompt)
            if self.trace is not None:
                self.trace.log(self.name, "request", prompt)
            if self.fail_always:
                if self.trace is not None:
                    self.trace.log(self.name, "error", "injected failure")
                raise CompletionError("mock client configured to fail")
            if self.script:
                item = self.script.pop(0)
                if isinstance(item, Exception):
                    if self.trace is not None:
                        self.trace.log(self.name, "error", str(item))
                    raise item
                if self.trace is not None:
                    self.trace.log(self.name, "response", item)
                return item
            for rule in self.rules:
                if rule.matches(prompt):
                    if self.trace is not None:
                        self.trace.log(self.name, "response", rule.response)
                    return rule.response
            if self.default is not None:
                if self.trace is not None:
                    self.trace.log(self.name, "response", self.default)
                return self.default
            if self.trace is not None:
                self.trace.log(self.name, "error", "no rule matched")
            raise CompletionError("mock client has no response for this prompt")


@dataclass
class HTTPCompletionClient:
    """Chat-completions-style HTTP backend.

    The auth token is read from the environment variable named by
    `token_env_var` at call time; request and response bodies are logged
    verbatim to the trace.
    """

    url: str
    model: str
    token_env_var: str = "SQLTRIAGE_API_TOKEN"
    timeout_s: float = 120.0
    trace: PromptTrace | None = None
    name: str = field(default="http")

    def complete(self, prompt: str, params: CompletionParams | None = None) -> str:
        params = params or CompletionParams()
        body = json.dumps({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        })
        if self.trace is not None:
            self.trace.log(self.name, "request", body)
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env_var, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        request = urllib.request.Request(
            self.url, data=body.encode("utf-8"), headers=headers, method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as resp:
                raw = resp.read().decode("utf-8")
        except urllib.error.HTTPError as exc:
            detail = exc.read().decode("utf-8", errors="replace")
            if self.trace is not None:
                self.trace.log(self.name, "error", detail)
            raise CompletionError(f"completion endpoint returned {exc.code}") from exc
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            if self.trace is not None:
                self.trace.log(self.name, "error", str(exc))
            raise CompletionError(f"completion request failed: {exc}") from exc
        if self.trace is not None:
            self.trace.log(self.name, "response", raw)
        try:
            doc = json.loads(raw)
            return doc["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise CompletionError("malformed completion response body") from exc
