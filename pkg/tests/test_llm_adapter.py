import json

import pytest
from hypothesis import given, strategies as st

from cxrlabel.errors import AuthError, NetworkError, RateLimitError, TemplateError
from cxrlabel.llm_adapter import (PLACEHOLDER, MockTransport, PromptTemplate, build_prompt, format_answer,
                                  label_reports, load_template, parse_response, prompt_key)
from cxrlabel.normalizer import CleanReport, clean_report
from cxrlabel.taxonomy import enforce_exclusion, load_schema


def report(text, acc="R1"):
    return CleanReport(acc=acc, findings="", impression=text, age_raw="050Y", age_years=50)


def test_build_prompt_substitution():
    assert build_prompt(PromptTemplate("X" + PLACEHOLDER + "Y"), report("R")) == "XRY"


@pytest.mark.parametrize("text", ["no placeholder", PLACEHOLDER * 2])
def test_template_invalid(text):
    with pytest.raises(TemplateError):
        PromptTemplate(text)


def test_packaged_template_covers_every_label(schema):
    assert load_template().missing_examples(schema) == []


def test_prompt_contains_impression(sample_report):
    prompt = build_prompt(load_template(), clean_report(sample_report))
    assert "双肺间质性病变" in prompt


@given(st.text(min_size=0, max_size=20), st.text(min_size=0, max_size=20))
def test_build_prompt_injective(a, b):
    tmpl = load_template()
    if a != b:
        assert build_prompt(tmpl, report(a)) != build_prompt(tmpl, report(b))


def test_parse_response_examples(schema):
    r = parse_response("肺结节，胸腔积液", schema)
    assert set(schema.positives(r.parsed)) == {"肺结节", "胸腔积液"}
    assert schema.positives(parse_response("未见明显异常", schema).parsed) == ("未见明显异常",)
    bad = parse_response("garbage text", schema)
    assert bad.parsed is None and bad.diagnosis


def test_parse_response_reports_unknown(schema):
    r = parse_response("答案：肺结节，肺气肿", schema)
    assert schema.positives(r.parsed) == ("肺结节",)
    assert r.unknown == ("肺气肿",) and "肺气肿" in r.diagnosis


vectors = st.lists(st.booleans(), min_size=14, max_size=14).map(tuple)


@given(vectors)
def test_parse_inverts_format(v):
    schema = load_schema()
    v = enforce_exclusion(schema, v)
    assert parse_response(format_answer(schema, v), schema).parsed == v


def test_mock_transport_end_to_end(schema, tmp_path):
    reports = [("A", report("双肺结节。", "A")), ("B", report("未见明显异常。", "B"))]
    responses = {"双肺结节": "肺结节", "*": "未见明显异常"}
    (tmp_path / "mock.json").write_text(json.dumps(responses, ensure_ascii=False), encoding="utf-8")
    t = MockTransport.from_file(tmp_path / "mock.json", model="gpt-3.5-turbo-1106")
    audit = tmp_path / "audit.jsonl"
    out = label_reports(reports, load_template(), schema, t, max_in_flight=2, audit_path=audit)
    assert schema.positives(out["A"].response.parsed) == ("肺结节",)
    assert schema.positives(out["B"].response.parsed) == ("未见明显异常",)
    lines = [json.loads(l) for l in audit.read_text(encoding="utf-8").splitlines()]
    assert {l["model"] for l in lines} == {"gpt-3.5-turbo-1106"}
    assert {l["sample_id"] for l in lines} == {"A", "B"}


def test_prompt_hash_key(schema):
    tmpl = PromptTemplate(PLACEHOLDER)
    t = MockTransport({prompt_key("abc"): "PICC"})
    assert t.send(build_prompt(tmpl, "abc")) == "PICC"


def test_retry_then_success():
    t = MockTransport({"*": "PICC"}, failures=[NetworkError("down"), RateLimitError("slow")])
    assert t.send("x") == "PICC" and t.calls == 3


def test_retry_exhausted_reports_attempts():
    t = MockTransport({"*": "PICC"}, failures=[NetworkError("down")] * 10)
    with pytest.raises(NetworkError) as ei:
        t.send("x")
    assert ei.value.attempts == t.max_retries + 1 == t.calls


def test_auth_not_retried():
    t = MockTransport({"*": "PICC"}, failures=[AuthError("bad key")])
    with pytest.raises(AuthError):
        t.send("x")
    assert t.calls == 1


def test_transport_failure_captured_per_sample(schema):
    t = MockTransport({"*": "PICC"}, failures=[AuthError("bad key")])
    out = label_reports([("A", report("x"))], PromptTemplate(PLACEHOLDER), schema, t, max_in_flight=1)
    assert out["A"].response.parsed is None and "AuthError" in out["A"].error


def test_http_transport_requires_configuration(monkeypatch):
    from cxrlabel.llm_adapter import HttpTransport
    for var in ("CXRLABEL_LLM_ENDPOINT", "CXRLABEL_LLM_MODEL", "CXRLABEL_LLM_API_KEY"):
        monkeypatch.delenv(var, raising=False)
    with pytest.raises(AuthError):
        HttpTransport()
