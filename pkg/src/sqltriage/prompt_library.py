"""Prompt template loading and placeholder rendering.

Templates ship as text files next to this module.  Rendering substitutes only
the named placeholders so every other byte of the template survives verbatim,
including literal doubled braces inside JSON examples.
"""

from __future__ import annotations

import re
from pathlib import Path

PROMPT_DIR = Path(__file__).parent / "prompts"

PROMPT_NAMES = (
    "vanilla_text_to_sql",
    "evidence_violation",
    "insufficient_evidence",
    "question_clause_linking",
    "column_ambiguity",
    "llm_self_check_bool",
    "llm_self_check_prob",
    "sql_correction",
)

PLACEHOLDER_NAMES = (
    "question",
    "evidence",
    "db_desc_str",
    "sql_query",
    "old_sql",
    "error_report",
    "db_desc",
)

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDER_NAMES) + r")\}")


def load_template(name: str) -> str:
    """Return the raw template text for one of PROMPT_NAMES."""
    if name not in PROMPT_NAMES:
        raise KeyError(f"unknown prompt template: {name!r}")
    return (PROMPT_DIR / f"{name}.txt").read_text(encoding="utf-8")


def placeholders_in(template: str) -> tuple:
    """The placeholder names a template actually uses, in appearance order."""
    seen = []
    for m in _PLACEHOLDER_RE.finditer(template):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return tuple(seen)


def render_prompt(template: str, **fields) -> str:
    """Substitute named placeholders; every other byte is left untouched."""
    needed = placeholders_in(template)
    missing = [n for n in needed if n not in fields]
    if missing:
        raise KeyError(f"missing placeholder values: {missing}")

    def _sub(m: re.Match) -> str:
        return str(fields[m.group(1)])

    return _PLACEHOLDER_RE.sub(_sub, template)
