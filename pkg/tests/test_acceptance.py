"""Acceptance criteria 1-7, each reported as one PASS/FAIL line."""

from __future__ import annotations

import random
import re
import time
from decimal import Decimal

import pytest

from esgkg.artifacts import write_segments
from esgkg.consolidation import consolidate
from esgkg.docmodel import find_toc_page, segment_document
from esgkg.extraction import OracleBackend, TokenUsage, extract_document
from esgkg.extraction.prompts import COMPONENT_TITLES, SEGMENT_END, SEGMENT_START, build_prompt
from esgkg.metrics import (
    CostLedger,
    ModelPrice,
    PriceTable,
    compute_metrics,
    cost_per_entity,
    cost_waste_ratio,
    entity_retention,
    relationship_retention,
)
from esgkg.docmodel import Segment
from esgkg.ontology import SCHEMA, STRUCTURAL_RULES, EntityKind, MetricSubtype, Predicate
from esgkg.synth import adversarial_baseline_corpus, generate_corpus
from esgkg.validation import RULE_IDS, validate_graph

from faults import INJECTORS
from helpers import commercial_banks_like, isomorphic, stamped

N_ORACLE_GRAPHS = 100
N_FAULT_INSTANCES = 50


def _pipeline(corpus, mode="ontology"):
    segments = segment_document(corpus.bundle)
    results = extract_document(segments, corpus.oracle(), mode=mode)
    c = consolidate(results)
    return validate_graph(c.graph, corpus.oracle())


@pytest.fixture(scope="module")
def oracle_suite():
    rng = random.Random(2024)
    start = time.perf_counter()
    runs = []
    for seed in range(N_ORACLE_GRAPHS):
        corpus = generate_corpus(
            seed, n_entities=rng.randint(6, 100), duplicates=rng.randint(1, 3), dangling=rng.randint(1, 3)
        )
        validated, report = _pipeline(corpus)
        runs.append((corpus, validated, report))
    return runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def fault_suite():
    start = time.perf_counter()
    runs = []
    for rule in RULE_IDS:
        for i in range(N_FAULT_INSTANCES):
            rng = random.Random(f"{rule}-{i}")
            truth = stamped(generate_corpus(i, n_entities=rng.randint(8, 60)).truth)
            faulty, gone_e, gone_r, k = INJECTORS[rule](truth, rng, rng.randint(1, 4))
            validated, report = validate_graph(faulty, OracleBackend({}, None))
            runs.append((rule, faulty, gone_e, gone_r, k, validated, report))
    return runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def baseline_suite():
    start = time.perf_counter()
    corpus = adversarial_baseline_corpus()
    validated, report = _pipeline(corpus, mode="baseline")
    return (corpus, validated, report), time.perf_counter() - start


# ---------------------------------------------------------------- 1


def test_criterion_1_metric_formulas(verdict):
    start = time.perf_counter()
    prices = PriceTable("fixture", {"m": ModelPrice(Decimal("1"), Decimal("5"))})
    onto = CostLedger("m", prices, TokenUsage(3_000_000, 250_000), TokenUsage(220_000, 20_000))
    base = CostLedger("m", prices, TokenUsage(3_200_000, 200_000), TokenUsage(180_000, 20_000))
    c_onto, c_base = cost_per_entity(onto, 295), cost_per_entity(base, 6)
    values = {
        "retention 42/53": (relationship_retention(42, 53), 79.2, 0.05),
        "retention 64/71": (relationship_retention(64, 71), 90.1, 0.05),
        "waste 69/364": (cost_waste_ratio(69, 364), 19.0, 0.1),
        "waste 213/219": (cost_waste_ratio(213, 219), 97.3, 0.1),
        "cost/entity ontology": (c_onto, 0.0155, 0.0005),
        "cost/entity baseline": (c_base, 0.747, 0.005),
        "efficiency ratio": (c_base / c_onto, 48, 1),
    }
    elapsed = time.perf_counter() - start
    bad = [k for k, (got, want, tol) in values.items() if abs(got - want) > tol]
    ok = not bad and elapsed < 1.0
    detail = ", ".join(f"{k}={got:.4g}" for k, (got, _, _) in values.items())
    verdict("1 metric formulas", ok, f"{detail}; {elapsed:.3f}s")
    assert not bad, bad
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2


def test_criterion_2_oracle_equivalence(oracle_suite, verdict):
    runs, elapsed = oracle_suite
    failures = []
    kinds_seen, preds_seen = set(), set()
    for corpus, validated, report in runs:
        m = compute_metrics(report)
        kinds = {e.kind for e in corpus.truth.entities}
        preds = {r.predicate for r in corpus.truth.relationships}
        kinds_seen |= kinds
        preds_seen |= preds
        if not (
            isomorphic(validated, corpus.truth)
            and m.semantic_accuracy == 100.0
            and m.schema_compliance == 100.0
            and len(kinds) == 5
            and len(preds) == 5
            and corpus.planted_duplicates > 0
            and corpus.planted_dangling > 0
        ):
            failures.append(corpus.doc_id)
    sizes = [len(c.truth.entities) for c, _, _ in runs]
    ok = not failures and len(runs) >= 100 and elapsed < 30.0
    verdict(
        "2 oracle end-to-end",
        ok,
        f"{len(runs) - len(failures)}/{len(runs)} isomorphic at 100/100, entities {min(sizes)}-{max(sizes)}; {elapsed:.2f}s",
    )
    assert len(runs) >= 100 and not failures
    assert elapsed < 30.0


# ---------------------------------------------------------------- 3


def test_criterion_3_fault_injection(fault_suite, verdict):
    runs, elapsed = fault_suite
    per_rule = {r: 0 for r in RULE_IDS}
    bad = []
    for rule, faulty, gone_e, gone_r, k, validated, report in runs:
        reported = [v for v in report.phase2_removed if v.rule_id == rule and v.round == 1]
        ok = (
            len(reported) == k
            and {e.id for e in validated.entities} == {e.id for e in faulty.entities} - gone_e
            and {r.key for r in validated.relationships} == {r.key for r in faulty.relationships} - gone_r
            and len(validated.entities) == len(faulty.entities) - len(gone_e) - (k if rule == "VR001" else 0)
        )
        if ok:
            per_rule[rule] += 1
        else:
            bad.append(rule)
    ok = not bad and min(per_rule.values()) >= 50 and elapsed < 10.0
    verdict("3 validator fault injection", ok, f"{per_rule} exact; {elapsed:.2f}s")
    assert not bad, bad
    assert min(per_rule.values()) >= 50
    assert elapsed < 10.0


# ---------------------------------------------------------------- 4


def test_criterion_4_baseline_filtering(baseline_suite, verdict):
    (corpus, validated, report), elapsed = baseline_suite
    e_in, r_in = report.input_counts
    e_out, r_out = report.output_counts
    known = {k.value for k in EntityKind}
    unknown = sum(1 for p in corpus.extractions.values() for e in p["entities"] if e["type"] not in known)
    retention = entity_retention(e_out, e_in)
    ok = retention <= 3.1 and r_out == 0 and unknown / e_in >= 0.9 and elapsed < 5.0
    verdict("4 baseline filtering", ok, f"{e_in}E,{r_in}R -> {e_out}E,{r_out}R ({retention:.2f}% retained); {elapsed:.2f}s")
    assert retention <= 3.1 and r_out == 0
    assert unknown / e_in >= 0.9
    assert elapsed < 5.0


# ---------------------------------------------------------------- 5


def test_criterion_5_segmentation(tmp_path, verdict):
    start = time.perf_counter()
    problems = []
    for seed in range(10):
        bundle = generate_corpus(100 + seed).bundle
        toc = find_toc_page(bundle)
        segs = segment_document(bundle)
        pages = [n for s in segs for n in range(s.page_range[0], s.page_range[1] + 1)]
        if pages != list(range(toc + 1, bundle.last_page + 1)):
            problems.append(f"partition {seed}")
        a = write_segments(tmp_path / f"{seed}a.json", segs, bundle.doc_id, bundle.title, "x", toc)
        b = write_segments(tmp_path / f"{seed}b.json", segment_document(bundle), bundle.doc_id, bundle.title, "x", toc)
        if a.read_bytes() != b.read_bytes():
            problems.append(f"determinism {seed}")
    cb = commercial_banks_like()
    n_cb = len(segment_document(cb))
    if len(cb.pages) != 23 or n_cb != 10:
        problems.append("23-page fixture")
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 5.0
    verdict("5 segmentation", ok, f"10 bundles partitioned and byte-stable, 23 pages -> {n_cb} segments; {elapsed:.2f}s")
    assert not problems, problems
    assert elapsed < 5.0


# ---------------------------------------------------------------- 6


def test_criterion_6_accounting(oracle_suite, fault_suite, baseline_suite, verdict):
    reports = [r for _, _, r in oracle_suite[0]]
    reports += [run[-1] for run in fault_suite[0]]
    reports.append(baseline_suite[0][2])
    broken, off = 0, 0
    for report in reports:
        if not report.accounting_holds():
            broken += 1
        e_in, e_out = report.input_counts[0], report.output_counts[0]
        if e_in and cost_waste_ratio(e_in - e_out, e_in) + entity_retention(e_out, e_in) != 100.0:
            off += 1
    ok = broken == 0 and off == 0
    verdict("6 accounting identities", ok, f"{len(reports)} runs, {broken} ledger mismatches, {off} complement mismatches")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_prompt_fidelity(verdict):
    start = time.perf_counter()
    seg = Segment("seg_01", "Data Security", (3, 4), "Describe the approach to data security.", [], "1", "doc")
    onto = build_prompt(seg, SCHEMA, "ontology")
    base = build_prompt(seg, SCHEMA, "baseline")
    positions = [onto.find(t) for t in COMPONENT_TITLES]
    lines = onto.splitlines()
    checks = {
        "nine components in order": len(COMPONENT_TITLES) == 9 and -1 not in positions and positions == sorted(positions),
        "components once": all(onto.count(t) == 1 for t in COMPONENT_TITLES),
        "five connection lines": all(spec.pattern() in lines for spec in SCHEMA.connection_map)
        and len(SCHEMA.connection_map) == 5,
        "seven rules": len(STRUCTURAL_RULES) == 7
        and all(f"({r.index}) {r.description}" in lines for r in STRUCTURAL_RULES),
        "segment markers once": onto.count(SEGMENT_START) == 1 and onto.count(SEGMENT_END) == 1,
    }
    vocab = [k.value for k in EntityKind] + [s.value for s in MetricSubtype] + [p.value for p in Predicate]
    checks["baseline free of ontology vocabulary"] = not any(
        re.search(rf"\b{re.escape(w)}\b", base) for w in vocab + [SEGMENT_START]
    )
    elapsed = time.perf_counter() - start
    failed = [k for k, v in checks.items() if not v]
    ok = not failed and elapsed < 1.0
    verdict("7 prompt fidelity", ok, f"{len(checks) - len(failed)}/{len(checks)} structural checks; {elapsed:.3f}s")
    assert not failed, failed
    assert elapsed < 1.0
