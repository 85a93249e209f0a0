"""Template fidelity, JSON extraction and repair, retry budget, downgrades."""

from __future__ import annotations

import re

import hypothesis.strategies as st
import pytest
from hypothesis import given, settings

from sqltriage.completion import CompletionError, MockCompletionClient, MockRule
from sqltriage.llm_signals import (
    MalformedJson,
    NoJsonFound,
    PromptContext,
    RETRY_SUFFIX,
    RunMode,
    SelfCheckMode,
    parse_json_block,
    render_db_description,
    run_llm_signals,
)
from sqltriage.prompt_library import (
    PLACEHOLDER_NAMES,
    PROMPT_NAMES,
    load_template,
    placeholders_in,
    render_prompt,
)
from sqltriage.signals import LLM_SIGNALS

_FILL = {name: f"<<{name.upper()}>>" for name in PLACEHOLDER_NAMES}


@pytest.mark.parametrize("name", PROMPT_NAMES)
def test_rendered_prompt_differs_only_at_placeholders(name):
    template = load_template(name)
    used = placeholders_in(template)
    assert used, f"template {name} declares no placeholders"
    rendered = render_prompt(template, **{k: _FILL[k] for k in used})
    expected = template
    for key in used:
        expected = re.sub(r"\{" + key + r"\}", _FILL[key], expected)
    assert rendered == expected
    # un-rendered bytes include any doubled braces from JSON examples
    if "{{" in template:
        assert "{{" in rendered


def test_unknown_template_name_rejected():
    with pytest.raises(KeyError):
        load_template("no_such_prompt")


def test_render_reports_missing_fields():
    template = load_template("evidence_violation")
    with pytest.raises(KeyError) as err:
        render_prompt(template, question="q")
    assert "evidence" in str(err.value)


def test_render_leaves_unknown_braces_alone():
    text = "keep {this} and {{that}} but fill {question}"
    out = render_prompt(text, question="Q")
    assert out == "keep {this} and {{that}} but fill Q"


def test_templates_cover_expected_placeholders():
    by_name = {n: placeholders_in(load_template(n)) for n in PROMPT_NAMES}
    assert by_name["vanilla_text_to_sql"] == ("question", "evidence",
                                              "db_desc_str")
    assert by_name["evidence_violation"] == ("question", "evidence",
                                             "sql_query")
    assert by_name["sql_correction"] == ("question", "evidence", "db_desc",
                                         "old_sql", "error_report")
    for name in ("insufficient_evidence", "question_clause_linking",
                 "column_ambiguity", "llm_self_check_bool",
                 "llm_self_check_prob"):
        assert by_name[name] == ("question", "evidence", "db_desc_str",
                                 "sql_query")


# ---------------------------------------------------------------------------
# parse_json_block


def test_parse_prefers_fenced_json():
    resp = 'noise {"a": 1} noise\n```json\n{"b": 2}\n```'
    assert parse_json_block(resp) == {"b": 2}


def test_parse_any_fence_then_bare_braces():
    assert parse_json_block('```\n{"c": 3}\n```') == {"c": 3}
    assert parse_json_block('prefix {"d": 4} suffix') == {"d": 4}


def test_parse_braces_inside_strings_do_not_confuse():
    resp = '{"sql": "SELECT \'{\' FROM t", "ok": true}'
    assert parse_json_block(resp) == {"sql": "SELECT '{' FROM t", "ok": True}


def test_parse_no_json_raises():
    with pytest.raises(NoJsonFound):
        parse_json_block("there is nothing here")


def test_parse_hopeless_braces_raise_malformed():
    with pytest.raises(MalformedJson):
        parse_json_block("{: not json at all ][")


def test_parse_repairs_trailing_comma():
    assert parse_json_block('{"a": 1,}') == {"a": 1}


def test_parse_repairs_missing_comma_between_lines():
    resp = '{\n  "a": true\n  "b": "x"\n}'
    assert parse_json_block(resp) == {"a": True, "b": "x"}


def test_parse_repairs_doubled_braces():
    assert parse_json_block('{{"a": 1}}') == {"a": 1}


def test_parse_repairs_unterminated_string():
    resp = '{\n  "a": "runs off the end\n}'
    assert parse_json_block(resp) == {"a": "runs off the end"}


def test_parse_recovers_worked_example():
    # the model answer combining doubled braces, a missing comma, and an
    # unterminated string, all at once
    raw = '''```json
{{
  "violates_evidence": true
  "explanation": "This SQL query violates the evidence in the question because it counts the number of users with more than 6 badges, not more than 5 badges. Additionally, it uses COUNT(DISTINCT Name) instead of COUNT(Name) as specified in the question.
}}
```'''
    assert parse_json_block(raw) == {
        "violates_evidence": True,
        "explanation": (
            "This SQL query violates the evidence in the question because it "
            "counts the number of users with more than 6 badges, not more "
            "than 5 badges. Additionally, it uses COUNT(DISTINCT Name) "
            "instead of COUNT(Name) as specified in the question."),
    }


def test_parse_rejects_non_object_json():
    with pytest.raises(NoJsonFound):
        parse_json_block("[1, 2, 3]")


# ---------------------------------------------------------------------------
# Retry budget and downgrade safety

_CTX = PromptContext(question="q?", evidence="", db_description="# Table: t",
                     sql="SELECT 1;")


def test_retry_appends_suffix_and_succeeds():
    client = MockCompletionClient(script=[
        "no json here",
        '{"correct": "yes", "explanation": "fine"}',
    ])
    outs = run_llm_signals(_CTX, client, enabled={LLM_SIGNALS[3]},
                           self_check_mode=SelfCheckMode.BOOL)
    assert len(outs) == 1 and not outs[0].flagged
    assert len(client.calls) == 2
    assert client.calls[1].endswith(RETRY_SUFFIX)
    assert client.calls[0] + RETRY_SUFFIX == client.calls[1]


def test_retry_budget_exhaustion_downgrades():
    client = MockCompletionClient(script=["junk", "junk", "junk", "junk"])
    outs = run_llm_signals(_CTX, client, enabled={LLM_SIGNALS[3]},
                           self_check_mode=SelfCheckMode.BOOL)
    assert len(client.calls) == 3          # 1 try + 2 retries
    assert not outs[0].flagged
    assert "signal skipped" in outs[0].detail


@settings(max_examples=120, deadline=None)
@given(st.sets(st.sampled_from(list(LLM_SIGNALS)), min_size=1))
def test_downgrade_safety_under_failing_client(enabled):
    # a client that always errors must yield not-flagged outcomes with notes,
    # one per enabled signal, in registry order, and never raise
    client = MockCompletionClient(fail_always=True)
    outs = run_llm_signals(_CTX, client, enabled=enabled,
                           self_check_mode=SelfCheckMode.BOOL)
    assert [o.signal_id for o in outs] == [s for s in LLM_SIGNALS
                                           if s in enabled]
    for out in outs:
        assert out.flagged is False
        assert out.problematic_clauses == {}
        assert out.detail.startswith("signal skipped:")
        assert "failure" in out.raw_evidence


def test_mock_script_exhaustion_is_a_completion_error():
    client = MockCompletionClient(script=["only one answer"])
    from sqltriage.completion import CompletionParams
    client.complete("first", CompletionParams())
    with pytest.raises(CompletionError):
        client.complete("second", CompletionParams())


def test_render_db_description_shape(catalogs):
    catalog = catalogs["codebase_community"]
    desc = render_db_description(catalog)
    # tables sorted by key, badges before users
    assert desc.startswith("# Table: badges\n[\n")
    assert "(DisplayName, DisplayName.)," in desc
    samples = {"users.displayname": ["Pierre", "Alice"]}
    desc2 = render_db_description(catalog, samples)
    assert "(DisplayName, DisplayName. Value examples: ['Pierre', 'Alice'].)," in desc2
