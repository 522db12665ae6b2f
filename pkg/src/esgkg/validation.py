"""Two-phase validation: semantic type checks, then the six schema rules.

Phase 1 asks the completion backend whether each entity's label and
description fit its kind; entities of kinds outside the ontology are rejected
without a call. Phase 2 evaluates VR001-VR006 against one snapshot, removes
everything that failed, cascades, and repeats until nothing else fails (a
removed Model can strand its CalculatedMetric). Rule pass counts are taken
from the first snapshot.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .extraction.backends import BackendError, CompletionBackend, CompletionRequest
from .extraction.core import ExtractionSettings, TokenUsage
from .extraction.parsing import parse_verdict
from .extraction.prompts import build_semantic_prompt
from .model import Entity, KnowledgeGraph, Provenance, Relationship, Stage, is_empty
from .ontology import SCHEMA, EntityKind, MetricSubtype, OntologySchema, Predicate

logger = logging.getLogger(__name__)

SEMANTIC_RULE = "SEM"
RULE_IDS: tuple[str, ...] = ("VR001", "VR002", "VR003", "VR004", "VR005", "VR006")
RULE_NAMES = {
    "VR001": "ID Uniqueness",
    "VR002": "Required Fields",
    "VR003": "Metric Values",
    "VR004": "Model Inputs",
    "VR005": "Predicate Validity",
    "VR006": "CM-Model Link",
}


@dataclass(frozen=True)
class Violation:
    rule_id: str
    target_id: str
    target_kind: str  # "entity" | "relationship"
    detail: str
    provenance: Optional[Provenance] = None
    target_index: int = -1
    round: int = 1

    def __post_init__(self) -> None:
        if self.rule_id != SEMANTIC_RULE and self.rule_id not in RULE_IDS:
            raise ValueError(f"unknown rule id {self.rule_id!r}")

    def to_dict(self) -> dict:
        return {
            "rule_id": self.rule_id,
            "target_kind": self.target_kind,
            "target_id": self.target_id,
            "target_index": self.target_index,
            "round": self.round,
            "detail": self.detail,
            "provenance": self.provenance.to_dict() if self.provenance else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        prov = d.get("provenance")
        return cls(
            rule_id=d["rule_id"],
            target_id=d["target_id"],
            target_kind=d["target_kind"],
            detail=d.get("detail", ""),
            provenance=Provenance.from_dict(prov) if prov else None,
            target_index=int(d.get("target_index", -1)),
            round=int(d.get("round", 1)),
        )


@dataclass(frozen=True)
class CascadeRecord:
    subject: str
    predicate: str
    object: str
    phase: int

    def to_dict(self) -> dict:
        return {"phase": self.phase, "subject": self.subject, "predicate": self.predicate, "object": self.object}

    @classmethod
    def from_dict(cls, d: dict) -> "CascadeRecord":
        return cls(d["subject"], d["predicate"], d["object"], int(d["phase"]))


@dataclass(frozen=True)
class Advisory:
    rule_index: int
    checker_id: str
    target_id: str
    detail: str

    def to_dict(self) -> dict:
        return {
            "rule_index": self.rule_index,
            "checker_id": self.checker_id,
            "target_id": self.target_id,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Advisory":
        return cls(int(d["rule_index"]), d["checker_id"], d["target_id"], d.get("detail", ""))


@dataclass
class ValidationReport:
    input_counts: tuple[int, int] = (0, 0)
    phase1_removed: list[Violation] = field(default_factory=list)
    phase1_cascaded: list[CascadeRecord] = field(default_factory=list)
    phase2_removed: list[Violation] = field(default_factory=list)
    phase2_cascaded: list[CascadeRecord] = field(default_factory=list)
    per_rule_pass: dict[str, tuple[int, int]] = field(default_factory=dict)
    output_counts: tuple[int, int] = (0, 0)
    semantic_calls: int = 0
    token_usage: TokenUsage = field(default_factory=TokenUsage)
    warnings: list[str] = field(default_factory=list)
    advisories: list[Advisory] = field(default_factory=list)

    @property
    def semantically_correct(self) -> int:
        return self.input_counts[0] - len(self.phase1_removed)

    def entity_removals(self) -> int:
        phase2 = {(v.round, v.target_index) for v in self.phase2_removed if v.target_kind == "entity"}
        return len(self.phase1_removed) + len(phase2)

    def relationship_removals(self) -> int:
        direct = {(v.round, v.target_index) for v in self.phase2_removed if v.target_kind == "relationship"}
        return len(self.phase1_cascaded) + len(direct) + len(self.phase2_cascaded)

    def accounting_holds(self) -> bool:
        e_in, r_in = self.input_counts
        e_out, r_out = self.output_counts
        return e_in - self.entity_removals() == e_out and r_in - self.relationship_removals() == r_out


def _first_prov(items: list[Provenance]) -> Optional[Provenance]:
    return items[0] if items else None


def _semantic_record(e: Entity) -> dict:
    return {"id": e.id, "type": e.kind, "label": e.label, "description": e.description}


@dataclass
class SemanticOutcome:
    entities: list[Entity]
    violations: list[Violation]
    token_usage: TokenUsage
    calls: int
    warnings: list[str]


def semantic_validate(
    graph: KnowledgeGraph,
    backend: CompletionBackend,
    schema: OntologySchema = SCHEMA,
    parallelism: int = 1,
    settings: ExtractionSettings = ExtractionSettings(),
) -> SemanticOutcome:
    """Phase 1. Backend failures keep the entity (fail-open) and log a warning."""

    def judge(e: Entity):
        if not schema.is_known_kind(e.kind):
            return "reject-unknown", TokenUsage(), 0
        prompt = build_semantic_prompt(_semantic_record(e), schema)
        req = CompletionRequest(prompt, settings.temperature, settings.max_tokens, settings.model_name)
        try:
            resp = backend.complete(req)
        except BackendError as exc:
            return f"unverifiable: {exc}", TokenUsage(), 1
        usage = TokenUsage(resp.input_tokens, resp.output_tokens)
        verdict = parse_verdict(resp.text)
        if verdict is None:
            return "unverifiable: unreadable verdict", usage, 1
        return ("keep" if verdict else "reject"), usage, 1

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(judge, graph.entities))
    else:
        outcomes = [judge(e) for e in graph.entities]

    kept, violations, warnings = [], [], []
    usage, calls = TokenUsage(), 0
    for idx, (e, (status, u, c)) in enumerate(zip(graph.entities, outcomes)):
        usage = usage + u
        calls += c
        if status == "reject-unknown":
            violations.append(
                Violation(SEMANTIC_RULE, e.id, "entity", f"unknown entity type {e.kind!r}", _first_prov(e.provenance), idx)
            )
        elif status == "reject":
            violations.append(
                Violation(
                    SEMANTIC_RULE, e.id, "entity", f"label/description do not match type {e.kind}",
                    _first_prov(e.provenance), idx,
                )
            )
        else:
            if status.startswith("unverifiable"):
                warnings.append(f"{e.id}: {status}; entity retained")
            kept.append(e)
    return SemanticOutcome(kept, violations, usage, calls, warnings)


def cascade_filter(graph: KnowledgeGraph, removed_ids) -> KnowledgeGraph:
    removed = set(removed_ids)
    entities = [e for e in graph.entities if e.id not in removed]
    rels = [r for r in graph.relationships if r.subject not in removed and r.object not in removed]
    return KnowledgeGraph(entities, rels, graph.stage)


@dataclass
class RuleOutcome:
    rule_id: str
    violations: list[Violation]
    passed: int
    total: int


def _vr001(graph: KnowledgeGraph, schema: OntologySchema, rnd: int) -> RuleOutcome:
    seen: set[str] = set()
    out = []
    for i, e in enumerate(graph.entities):
        if e.id in seen:
            out.append(Violation("VR001", e.id, "entity", "duplicate id", _first_prov(e.provenance), i, rnd))
        seen.add(e.id)
    n = len(graph.entities)
    return RuleOutcome("VR001", out, n - len(out), n)


def _vr002(graph: KnowledgeGraph, schema: OntologySchema, rnd: int) -> RuleOutcome:
    out = []
    for i, e in enumerate(graph.entities):
        if not schema.is_known_kind(e.kind):
            detail = f"type {e.kind!r} has no field specification"
        else:
            missing = [f for f in sorted(schema.required_fields(e.kind)) if is_empty(e.field_value(f))]
            if not missing:
                continue
            detail = "missing required fields: " + ", ".join(missing)
        out.append(Violation("VR002", e.id, "entity", detail, _first_prov(e.provenance), i, rnd))
    n = len(graph.entities)
    return RuleOutcome("VR002", out, n - len(out), n)


def _vr003(graph: KnowledgeGraph, schema: OntologySchema, rnd: int) -> RuleOutcome:
    out, total = [], 0
    for i, e in enumerate(graph.entities):
        if e.kind != EntityKind.METRIC.value:
            continue
        total += 1
        empty = [f for f in ("code", "unit") if is_empty(e.properties.get(f))]
        if empty:
            out.append(Violation("VR003", e.id, "entity", "empty " + " and ".join(empty), _first_prov(e.provenance), i, rnd))
    return RuleOutcome("VR003", out, total - len(out), total)


def _valid_inputs(value) -> bool:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, (list, tuple)):
        return False
    return any(not is_empty(v) for v in value)


def _vr004(graph: KnowledgeGraph, schema: OntologySchema, rnd: int) -> RuleOutcome:
    out, total = [], 0
    for i, e in enumerate(graph.entities):
        if e.kind != EntityKind.MODEL.value:
            continue
        total += 1
        if not _valid_inputs(e.properties.get("input_variables")):
            out.append(Violation("VR004", e.id, "entity", "no valid input variable", _first_prov(e.provenance), i, rnd))
    return RuleOutcome("VR004", out, total - len(out), total)


def _vr005(graph: KnowledgeGraph, schema: OntologySchema, rnd: int) -> RuleOutcome:
    index = graph.entity_index()
    out = []
    for i, r in enumerate(graph.relationships):
        s, o = index.get(r.subject), index.get(r.object)
        if s is None or o is None:
            ok, detail = False, "endpoint not in graph"
        else:
            ok = schema.predicate_is_legal(s.kind, r.predicate, o.kind, s.metric_subtype, o.metric_subtype)
            s_label = s.metric_subtype if s.kind == EntityKind.METRIC.value and s.metric_subtype else s.kind
            o_label = o.metric_subtype if o.kind == EntityKind.METRIC.value and o.metric_subtype else o.kind
            detail = f"illegal pattern {s_label} -{r.predicate}-> {o_label}"
        if not ok:
            out.append(
                Violation("VR005", f"{r.subject}|{r.predicate}|{r.object}", "relationship", detail, _first_prov(r.provenance), i, rnd)
            )
    n = len(graph.relationships)
    return RuleOutcome("VR005", out, n - len(out), n)


def _vr006(graph: KnowledgeGraph, schema: OntologySchema, rnd: int) -> RuleOutcome:
    index = graph.entity_index()
    links: Counter[str] = Counter()
    for r in graph.relationships:
        if r.predicate != Predicate.IS_CALCULATED_BY.value:
            continue
        target = index.get(r.object)
        if target is not None and target.kind == EntityKind.MODEL.value:
            links[r.subject] += 1
    out, total = [], 0
    for i, e in enumerate(graph.entities):
        if e.kind != EntityKind.METRIC.value or e.metric_subtype != MetricSubtype.CALCULATED.value:
            continue
        total += 1
        if links[e.id] != 1:
            out.append(
                Violation("VR006", e.id, "entity", f"{links[e.id]} IsCalculatedBy links to a Model (need exactly 1)", _first_prov(e.provenance), i, rnd)
            )
    return RuleOutcome("VR006", out, total - len(out), total)


RULES: dict[str, Callable[[KnowledgeGraph, OntologySchema, int], RuleOutcome]] = {
    "VR001": _vr001,
    "VR002": _vr002,
    "VR003": _vr003,
    "VR004": _vr004,
    "VR005": _vr005,
    "VR006": _vr006,
}


def run_rule(rule_id: str, graph: KnowledgeGraph, schema: OntologySchema = SCHEMA, round: int = 1) -> RuleOutcome:
    try:
        rule = RULES[rule_id]
    except KeyError:
        raise ValueError(f"unknown rule {rule_id!r}") from None
    return rule(graph, schema, round)


@dataclass
class SchemaOutcome:
    graph: KnowledgeGraph
    per_rule_pass: dict[str, tuple[int, int]]
    violations: list[Violation]
    cascaded: list[CascadeRecord]


def schema_validate(
    graph: KnowledgeGraph,
    schema: OntologySchema = SCHEMA,
    rule_order: tuple[str, ...] = RULE_IDS,
) -> SchemaOutcome:
    """Phase 2 over a snapshot, repeated until the graph stops changing."""
    per_rule: dict[str, tuple[int, int]] = {}
    violations: list[Violation] = []
    cascaded: list[CascadeRecord] = []
    current = graph
    rnd = 1
    while True:
        outcomes = [run_rule(rid, current, schema, rnd) for rid in rule_order]
        if rnd == 1:
            per_rule = {o.rule_id: (o.passed, o.total) for o in sorted(outcomes, key=lambda o: o.rule_id)}
        found = [v for o in sorted(outcomes, key=lambda o: o.rule_id) for v in o.violations]
        if not found:
            break
        violations.extend(found)
        bad_entities = {v.target_index for v in found if v.target_kind == "entity"}
        bad_rels = {v.target_index for v in found if v.target_kind == "relationship"}
        entities = [e for i, e in enumerate(current.entities) if i not in bad_entities]
        ids = {e.id for e in entities}
        rels = []
        for i, r in enumerate(current.relationships):
            if i in bad_rels:
                continue
            if r.subject in ids and r.object in ids:
                rels.append(r)
            else:
                cascaded.append(CascadeRecord(r.subject, r.predicate, r.object, 2))
        current = KnowledgeGraph(entities, rels, current.stage)
        rnd += 1
    return SchemaOutcome(current, per_rule, violations, cascaded)


def check_structural_rules(graph: KnowledgeGraph, schema: OntologySchema = SCHEMA) -> list[Advisory]:
    """Findings for the seven structural rules. Informational only; VR003,
    VR005 and VR006 enforce the parts that lead to removal."""
    index = graph.entity_index()
    out_edges: dict[str, list[Relationship]] = defaultdict(list)
    in_edges: dict[str, list[Relationship]] = defaultdict(list)
    for r in graph.relationships:
        out_edges[r.subject].append(r)
        in_edges[r.object].append(r)

    def count(edges: list[Relationship], predicate: Predicate) -> int:
        return sum(1 for r in edges if r.predicate == predicate.value)

    rules = {r.index: r for r in schema.rules}
    found: list[Advisory] = []

    def add(idx: int, target: str, detail: str) -> None:
        found.append(Advisory(idx, rules[idx].checker_id, target, detail))

    for e in graph.entities:
        kind = e.kind
        if kind == EntityKind.INDUSTRY.value and count(out_edges[e.id], Predicate.REPORT_USING) != 1:
            add(1, e.id, f"uses {count(out_edges[e.id], Predicate.REPORT_USING)} frameworks")
        if kind == EntityKind.REPORTING_FRAMEWORK.value and count(out_edges[e.id], Predicate.INCLUDE) < 1:
            add(2, e.id, "includes no Category")
        if kind == EntityKind.CATEGORY.value and count(out_edges[e.id], Predicate.CONSIST_OF) < 1:
            add(3, e.id, "contains no Metric")
        if kind == EntityKind.METRIC.value:
            n_cat = count(in_edges[e.id], Predicate.CONSIST_OF)
            if n_cat != 1:
                add(3, e.id, f"belongs to {n_cat} Categories")
            n_calc = count(out_edges[e.id], Predicate.IS_CALCULATED_BY)
            if e.metric_subtype == MetricSubtype.CALCULATED.value and n_calc != 1:
                add(4, e.id, f"CalculatedMetric with {n_calc} IsCalculatedBy links")
            if e.metric_subtype != MetricSubtype.CALCULATED.value and n_calc:
                add(4, e.id, f"{e.metric_subtype} has IsCalculatedBy links")
            if str(e.properties.get("measurement_type", "")).lower() == "quantitative" and is_empty(
                e.properties.get("unit")
            ):
                add(6, e.id, "quantitative metric without unit")
        if kind == EntityKind.MODEL.value:
            inputs = [
                r for r in out_edges[e.id]
                if r.predicate == Predicate.REQUIRES_INPUT_FROM.value
                and r.object in index
                and index[r.object].metric_subtype == MetricSubtype.INPUT.value
            ]
            if not inputs:
                add(5, e.id, "no RequiresInputFrom link to an InputMetric")
        if kind in (EntityKind.CATEGORY.value, EntityKind.METRIC.value, EntityKind.MODEL.value):
            if not out_edges[e.id] and not in_edges[e.id]:
                add(7, e.id, "orphaned entity")
    return found


def validate_graph(
    graph: KnowledgeGraph,
    backend: CompletionBackend,
    schema: OntologySchema = SCHEMA,
    parallelism: int = 1,
    settings: ExtractionSettings = ExtractionSettings(),
) -> tuple[KnowledgeGraph, ValidationReport]:
    report = ValidationReport(input_counts=(len(graph.entities), len(graph.relationships)))

    sem = semantic_validate(graph, backend, schema, parallelism, settings)
    report.phase1_removed = sem.violations
    report.semantic_calls = sem.calls
    report.token_usage = sem.token_usage
    report.warnings.extend(sem.warnings)
    kept_ids = {e.id for e in sem.entities}
    rels = []
    for r in graph.relationships:
        if r.subject in kept_ids and r.object in kept_ids:
            rels.append(r)
        else:
            report.phase1_cascaded.append(CascadeRecord(r.subject, r.predicate, r.object, 1))
    after_phase1 = KnowledgeGraph(sem.entities, rels, graph.stage)

    outcome = schema_validate(after_phase1, schema)
    report.phase2_removed = outcome.violations
    report.phase2_cascaded = outcome.cascaded
    report.per_rule_pass = outcome.per_rule_pass
    validated = KnowledgeGraph(outcome.graph.entities, outcome.graph.relationships, Stage.VALIDATED)
    report.output_counts = (len(validated.entities), len(validated.relationships))
    report.advisories = check_structural_rules(validated, schema)
    return validated, report
