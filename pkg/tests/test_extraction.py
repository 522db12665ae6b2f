from __future__ import annotations

import json
import random
import re
import threading
import time

import httpx
import pytest

from esgkg.artifacts import results_to_document
from esgkg.docmodel import RawTable, Segment, segment_document
from esgkg.extraction import (
    COMPONENT_TITLES,
    SEGMENT_END,
    SEGMENT_START,
    AllSegmentsFailedError,
    BackendError,
    CompletionRequest,
    CompletionResponse,
    ExtractionParseError,
    ExtractionResult,
    FunctionBackend,
    LiveBackend,
    OracleBackend,
    PromptMode,
    RecordingBackend,
    ReplayBackend,
    build_prompt,
    extract_document,
    extract_segment,
    parse_extraction_json,
    parse_verdict,
    quality_check,
    total_usage,
)
from esgkg.extraction.core import segment_provenance
from esgkg.extraction.backends import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, prompt_hash
from esgkg.extraction.prompts import EmptySegmentError
from esgkg.model import Entity, Relationship
from esgkg.ontology import SCHEMA, STRUCTURAL_RULES, EntityKind, MetricSubtype, Predicate
from esgkg.synth import generate_corpus

ONTOLOGY_WORDS = [k.value for k in EntityKind] + [s.value for s in MetricSubtype] + [p.value for p in Predicate]


def seg(i: int = 1, content: str = "Lending practices and data breaches.", pages=(3, 4)) -> Segment:
    return Segment(f"seg_{i}", f"Topic {i}", pages, content, [], str(i), "sasb_cb")


GOOD = {
    "meta": {"section": "Topic 1"},
    "entities": [
        {
            "id": "metric_sasb_cb_3_01", "type": "Metric", "label": "Number of data breaches",
            "description": "Count of breaches.",
            "properties": {"measurement_type": "Quantitative", "metric_type": "DirectMetric", "unit": "Number", "code": "FN-CB-230a.1"},
            "source": {"doc_id": "sasb_cb", "page": 4, "quote": "data breaches"},
        },
        {
            "id": "category_sasb_cb_3_01", "type": "Category", "label": "Data Security",
            "description": "Topic.", "properties": {"section_title": "Data Security"},
        },
    ],
    "relationships": [{"subject": "category_sasb_cb_3_01", "predicate": "ConsistOf", "object": "metric_sasb_cb_3_01"}],
}


# ---------------------------------------------------------------- prompts


def test_request_defaults():
    r = CompletionRequest("p")
    assert (r.temperature, r.max_tokens) == (0.1, 16000) == (DEFAULT_TEMPERATURE, DEFAULT_MAX_TOKENS)


def test_ontology_prompt_components_in_order():
    p = build_prompt(seg(), SCHEMA, PromptMode.ONTOLOGY)
    positions = [p.index(t) for t in COMPONENT_TITLES]
    assert len(COMPONENT_TITLES) == 9 and positions == sorted(positions)
    for t in COMPONENT_TITLES:
        assert p.count(t) == 1


def test_ontology_prompt_schema_content():
    p = build_prompt(seg(), SCHEMA, "ontology")
    lines = p.splitlines()
    for pattern in (
        "Industry → ReportUsing → ReportingFramework",
        "ReportingFramework → Include → Category",
        "Category → ConsistOf → Metric",
        "CalculatedMetric → IsCalculatedBy → Model",
        "Model → RequiresInputFrom → InputMetric",
    ):
        assert pattern in lines
    for rule in STRUCTURAL_RULES:
        assert f"({rule.index}) {rule.description}" in lines


def test_segment_markers_exactly_once_around_content():
    s = seg(content="Unique body sentence.")
    s.tables = [RawTable(3, ["Code", "Metric"], [["A.1", "x"]])]
    p = build_prompt(s, SCHEMA, "ontology")
    assert p.count(SEGMENT_START) == 1 and p.count(SEGMENT_END) == 1
    inner = p[p.index(SEGMENT_START) + len(SEGMENT_START) : p.index(SEGMENT_END)]
    assert "Unique body sentence." in inner and "| A.1 | x |" in inner
    assert p.count("Unique body sentence.") == 1


def test_prompt_is_pure():
    assert build_prompt(seg(), SCHEMA, "ontology") == build_prompt(seg(), SCHEMA, "ontology")
    assert build_prompt(seg(), SCHEMA, "baseline") == build_prompt(seg(), SCHEMA, "baseline")


def test_baseline_prompt_has_no_ontology_vocabulary():
    p = build_prompt(seg(content="Plain text only."), SCHEMA, PromptMode.BASELINE)
    for word in ONTOLOGY_WORDS + ["→", SEGMENT_START]:
        assert not re.search(rf"\b{re.escape(word)}\b", p), word
    assert "Document: sasb_cb" in p and "Section: Topic 1" in p and "Plain text only." in p


def test_empty_segment_rejected():
    with pytest.raises(EmptySegmentError):
        build_prompt(seg(content="  \n"), SCHEMA, "ontology")


# ---------------------------------------------------------------- parsing


def test_parse_well_formed():
    parsed = parse_extraction_json(json.dumps(GOOD))
    assert (len(parsed.entities), len(parsed.relationships)) == (2, 1)
    assert parsed.meta == {"section": "Topic 1"}
    m = parsed.entities[0]
    assert m.metric_subtype == "DirectMetric" and m.properties["unit"] == "Number"
    assert "metric_type" not in m.properties


def test_parse_fenced_equals_bare():
    bare = parse_extraction_json(json.dumps(GOOD))
    fenced = parse_extraction_json("```json\n" + json.dumps(GOOD, indent=2) + "\n```")
    assert fenced.entities == bare.entities and fenced.relationships == bare.relationships


def test_parse_truncated_fails():
    body = json.dumps(GOOD)
    with pytest.raises(ExtractionParseError):
        parse_extraction_json(body[: len(body) // 2])


def test_parse_repairs_trailing_commas_and_chatter():
    body = 'Here you go: {"entities": [{"id": "a", "type": "Metric", "label": "x",},], "relationships": []} thanks'
    parsed = parse_extraction_json(body)
    assert parsed.repaired and [e.id for e in parsed.entities] == ["a"]


def test_parse_keeps_unknown_kind_and_defaults():
    parsed = parse_extraction_json('{"entities": [{"id": "e1", "type": "Standard", "label": "ISO"}], "relationships": []}')
    e = parsed.entities[0]
    assert e.kind == "Standard" and e.description == "" and e.properties == {} and e.metric_subtype is None


@pytest.mark.parametrize(
    "body, expected",
    [('{"verdict": "yes"}', True), ('{"verdict": "no"}', False), ("```json\n{\"verdict\": true}\n```", True), ("maybe", None)],
)
def test_parse_verdict(body, expected):
    assert parse_verdict(body) is expected


# ---------------------------------------------------------------- quality check


def _result(*entities, rels=()):
    return ExtractionResult("seg_1", list(entities), list(rels))


def test_quality_unknown_kind():
    flags = quality_check(_result(Entity("e1", "Standard", "ISO 14001")))
    assert [f.code for f in flags] == ["unknown-kind"]


def test_quality_metric_missing_unit():
    parsed = parse_extraction_json(json.dumps(GOOD))
    del parsed.entities[0].properties["unit"]
    for e in parsed.entities:
        e.provenance = [segment_provenance(seg())]
    flags = quality_check(_result(*parsed.entities, rels=parsed.relationships))
    assert [(f.code, f.detail) for f in flags] == [("missing-field", "Metric is missing unit")]


def test_quality_conformant_is_empty():
    r = extract_segment(seg(), FunctionBackend(lambda req: json.dumps(GOOD)))
    assert r.quality_flags == []


def test_quality_unknown_reference_and_no_entities():
    flags = quality_check(_result(rels=[Relationship("a", "ConsistOf", "b")]))
    assert sorted(f.code for f in flags) == ["no-entities", "unknown-reference", "unknown-reference"]
    assert quality_check(_result(rels=[Relationship("a", "ConsistOf", "b")]), prior_ids={"a", "b"})[0].code == "no-entities"


# ---------------------------------------------------------------- extract_segment


def test_extract_planted_metric_with_provenance():
    s = seg()
    oracle = OracleBackend({s.title: {"entities": GOOD["entities"][:1], "relationships": []}})
    r = extract_segment(s, oracle)
    assert [e.id for e in r.entities] == ["metric_sasb_cb_3_01"]
    prov = r.entities[0].provenance[0]
    assert prov.segment_id == s.id and prov.doc_id == "sasb_cb" and prov.page_range == (4, 4)
    assert prov.quote == "data breaches"
    assert r.token_usage.input > 0 and r.calls == 1


def test_extract_out_of_range_page_falls_back_to_segment_range():
    payload = json.loads(json.dumps(GOOD))
    payload["entities"][0]["source"]["page"] = 99
    r = extract_segment(seg(), FunctionBackend(lambda req: json.dumps(payload)))
    assert r.entities[0].provenance[0].page_range == (3, 4)


def test_extract_malformed_twice_fails():
    backend = FunctionBackend(lambda req: '{"entities": [')
    r = extract_segment(seg(), backend)
    assert r.failed and r.entities == [] and r.calls == 2 and backend.calls == 2
    assert r.error.startswith("parse-failure")


def test_extract_malformed_then_good_retries_once():
    replies = iter(["not json", json.dumps(GOOD)])
    r = extract_segment(seg(), FunctionBackend(lambda req: next(replies)))
    assert not r.failed and r.calls == 2 and len(r.entities) == 2


def test_extract_drops_self_loops_with_flag():
    payload = json.loads(json.dumps(GOOD))
    payload["relationships"].append({"subject": "category_sasb_cb_3_01", "predicate": "ConsistOf", "object": "category_sasb_cb_3_01"})
    r = extract_segment(seg(), FunctionBackend(lambda req: json.dumps(payload)))
    assert len(r.relationships) == 1 and [f.code for f in r.quality_flags] == ["self-loop"]


def test_extract_backend_error_propagates():
    def boom(req):
        raise BackendError("down")

    with pytest.raises(BackendError):
        extract_segment(seg(), FunctionBackend(boom))


# ---------------------------------------------------------------- extract_document


def _jittery(seed: int):
    rng = random.Random(seed)
    lock = threading.Lock()

    def fn(req: CompletionRequest) -> str:
        with lock:
            delay = rng.random() * 0.01
        time.sleep(delay)
        title = re.search(r"^Section: (.*)$", req.prompt, re.M).group(1)
        n = int(title.split()[-1])
        return json.dumps({"entities": [{"id": f"e{n}", "type": "Category", "label": title, "properties": {"section_title": title}}], "relationships": []})

    return FunctionBackend(fn)


def test_document_results_in_segment_order():
    segs = [seg(i) for i in range(1, 11)]
    results = extract_document(segs, _jittery(1), parallelism=4)
    assert [r.segment_id for r in results] == [s.id for s in segs]
    assert [r.entities[0].id for r in results] == [f"e{i}" for i in range(1, 11)]


def test_parallelism_1_vs_4_identical():
    corpus = generate_corpus(11)
    segs = segment_document(corpus.bundle)
    one = extract_document(segs, corpus.oracle(), parallelism=1)
    four = extract_document(segs, corpus.oracle(), parallelism=4)
    assert json.dumps(results_to_document(one)) == json.dumps(results_to_document(four))


def test_partial_failure():
    segs = [seg(i) for i in range(1, 11)]
    bad = {2, 5, 9}

    def fn(req):
        n = int(re.search(r"^Section: Topic (\d+)$", req.prompt, re.M).group(1))
        return "garbage" if n in bad else json.dumps({"entities": [], "relationships": []})

    results = extract_document(segs, FunctionBackend(fn), parallelism=3)
    assert len(results) == 10
    assert [int(r.segment_id.split("_")[1]) for r in results if r.failed] == sorted(bad)


def test_all_failed_raises():
    with pytest.raises(AllSegmentsFailedError) as info:
        extract_document([seg(1), seg(2)], FunctionBackend(lambda req: "nope"))
    assert len(info.value.results) == 2


def test_backend_error_is_a_failure_record():
    def fn(req):
        if "Topic 1" in req.prompt:
            raise BackendError("timeout")
        return json.dumps(GOOD)

    results = extract_document([seg(1), seg(2)], FunctionBackend(fn))
    assert results[0].failed and results[0].error.startswith("backend-error")
    assert not results[1].failed


def test_empty_segment_is_a_failure_record():
    results = extract_document([seg(1, content=""), seg(2)], FunctionBackend(lambda req: json.dumps(GOOD)))
    assert results[0].failed and results[0].error == "empty-segment"


def test_parallelism_must_be_positive():
    with pytest.raises(ValueError):
        extract_document([seg()], FunctionBackend(lambda r: "{}"), parallelism=0)


@pytest.mark.parametrize("seed", range(8))
def test_oracle_union_equals_planted_payloads(seed):
    corpus = generate_corpus(seed)
    segs = segment_document(corpus.bundle)
    results = extract_document(segs, corpus.oracle())
    got_e = sorted((e.id, e.kind, e.label) for r in results for e in r.entities)
    want_e = sorted((d["id"], d["type"], d["label"]) for p in corpus.extractions.values() for d in p["entities"])
    assert got_e == want_e
    got_r = sorted(r.key for res in results for r in res.relationships)
    want_r = sorted((d["subject"], d["predicate"], d["object"]) for p in corpus.extractions.values() for d in p["relationships"])
    assert got_r == want_r
    # truth is contained in the union
    assert {e.id for e in corpus.truth.entities} <= {e[0] for e in got_e}
    # every element carries provenance inside its segment
    by_id = {s.id: s for s in segs}
    for r in results:
        lo, hi = by_id[r.segment_id].page_range
        for el in [*r.entities, *r.relationships]:
            p = el.provenance[0]
            assert p.segment_id == r.segment_id and p.doc_id == corpus.doc_id
            assert lo <= p.page_range[0] <= p.page_range[1] <= hi
    assert total_usage(results).input == sum(r.token_usage.input for r in results)


# ---------------------------------------------------------------- backends


def _anthropic_reply(text: str, status: int = 200):
    def handler(request: httpx.Request) -> httpx.Response:
        handler.seen.append(request)
        if status != 200:
            return httpx.Response(status, json={"error": {"message": "nope"}})
        return httpx.Response(
            200,
            json={"content": [{"type": "text", "text": text}], "usage": {"input_tokens": 11, "output_tokens": 7}},
        )

    handler.seen = []
    return handler


def test_live_backend_wire_format(monkeypatch):
    monkeypatch.setenv("ESGKG_API_KEY", "test-key")
    handler = _anthropic_reply(json.dumps(GOOD))
    backend = LiveBackend("https://example.invalid/v1/messages", "model-x", transport=httpx.MockTransport(handler))
    resp = backend.complete(CompletionRequest("hello", 0.1, 16000, ""))
    assert resp == CompletionResponse(json.dumps(GOOD), 11, 7)
    req = handler.seen[0]
    assert req.headers["x-api-key"] == "test-key"
    body = json.loads(req.content)
    assert body == {"model": "model-x", "max_tokens": 16000, "temperature": 0.1, "messages": [{"role": "user", "content": "hello"}]}


def test_live_backend_auth_error(monkeypatch):
    monkeypatch.setenv("ESGKG_API_KEY", "wrong")
    backend = LiveBackend("https://example.invalid/v1/messages", "m", transport=httpx.MockTransport(_anthropic_reply("", 401)))
    with pytest.raises(BackendError, match="authentication"):
        backend.complete(CompletionRequest("x"))


def test_live_backend_needs_key(monkeypatch):
    monkeypatch.delenv("ESGKG_API_KEY", raising=False)
    with pytest.raises(BackendError):
        LiveBackend("https://example.invalid", "m")


def test_record_then_replay(tmp_path, monkeypatch):
    monkeypatch.setenv("ESGKG_API_KEY", "k")
    live = LiveBackend("https://example.invalid", "m", transport=httpx.MockTransport(_anthropic_reply(json.dumps(GOOD))))
    segs = [seg(1), seg(2)]
    recorded = extract_document(segs, RecordingBackend(live, tmp_path))
    assert len(list(tmp_path.glob("*.json"))) == 2
    replayed = extract_document(segs, ReplayBackend(tmp_path))
    assert json.dumps(results_to_document(recorded)) == json.dumps(results_to_document(replayed))
    prompt = build_prompt(segs[0], SCHEMA, "ontology")
    assert (tmp_path / f"{prompt_hash(prompt)}.json").exists()


def test_replay_missing_fixture(tmp_path):
    with pytest.raises(BackendError):
        ReplayBackend(tmp_path).complete(CompletionRequest("unknown"))
