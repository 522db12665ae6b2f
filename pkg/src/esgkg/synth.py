"""Synthetic corpora with known ground truth.

A corpus is a ground-truth graph, a page bundle whose table of contents
lines up with the sections the graph was spread over, and the per-section
extraction payloads an oracle backend should return. Payloads deliberately
repeat some entities across sections (same id, or a fresh id with the same
label and code) and reference ids that are never defined, so consolidation
has real work to do.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .docmodel import DocumentBundle, Page, RawTable
from .extraction.backends import OracleBackend, normalize_label
from .model import Entity, KnowledgeGraph, Relationship, Stage
from .ontology import EntityKind, MetricSubtype, Predicate, make_entity_id

TOPICS = (
    "Data Security",
    "Financial Inclusion and Capacity Building",
    "Greenhouse Gas Emissions",
    "Energy Management",
    "Water and Wastewater Management",
    "Product Lifecycle Management",
    "Materials Sourcing",
    "Workforce Health and Safety",
    "Business Ethics",
    "Systemic Risk Management",
    "Climate Scenario Analysis",
    "Transition Risk Exposure",
    "Physical Risk Exposure",
    "Governance Oversight",
    "Competitive Behaviour",
    "Supply Chain Management",
    "Employee Engagement",
    "Waste Management",
    "Community Relations",
    "Risk Management Processes",
)
MEASURES = (
    "emissions", "energy consumed", "water withdrawn", "incidents", "employees trained",
    "loans outstanding", "revenue share", "waste generated", "breaches", "fines paid",
    "hours lost", "facilities assessed", "suppliers audited", "capital expenditure",
)
QUALIFIERS = (
    "Total", "Gross", "Net", "Percentage of", "Number of", "Amount of", "Scope 1", "Scope 2",
    "Annual", "Average",
)
UNITS = ("tCO2e", "GJ", "Percentage (%)", "Number", "Reporting currency", "Thousand cubic meters (m³)", "Hours")


@dataclass
class SyntheticCorpus:
    doc_id: str
    title: str
    truth: KnowledgeGraph
    bundle: DocumentBundle
    extractions: dict[str, dict]
    correct: set[tuple[str, str]]
    section_titles: list[str]
    planted_duplicates: int = 0
    planted_dangling: int = 0
    raw_entity_count: int = 0
    raw_relationship_count: int = 0

    def oracle(self) -> OracleBackend:
        return OracleBackend(self.extractions, self.correct)

    def truth_document(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "section_titles": list(self.section_titles),
            "truth_graph": self.truth.to_dict(),
            "extractions": self.extractions,
            "correct": sorted([list(c) for c in self.correct]),
        }

    def write(self, directory: Path | str) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        bundle_path = d / "bundle.json"
        truth_path = d / "truth.json"
        bundle_path.write_text(json.dumps(self.bundle.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        truth_path.write_text(json.dumps(self.truth_document(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return bundle_path, truth_path


def oracle_from_truth_file(path: Path | str) -> OracleBackend:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return OracleBackend(data["extractions"], {(k, lbl) for k, lbl in data["correct"]})


# ---------------------------------------------------------------- layout


@dataclass
class SectionSpec:
    title: str
    n_pages: int
    lines: list[str] = field(default_factory=list)
    tables: list[tuple[list[str], list[list[str]]]] = field(default_factory=list)


def layout_bundle(doc_id: str, title: str, sections: list[SectionSpec], dotted: bool = True) -> DocumentBundle:
    """Title page, TOC page, then each section on its own run of pages.

    Every page carries the same running header and a numbered footer. A
    section's tables go on its last pages; a table longer than four rows on a
    multi-page section is split across two pages with a continuation hint.
    """
    header = f"{title} | Sustainability Accounting Standard"
    starts = []
    page_no = 3
    for s in sections:
        starts.append(page_no)
        page_no += s.n_pages
    toc_lines = ["Table of Contents"] if not dotted else ["Table of Contents"]
    for i, (s, start) in enumerate(zip(sections, starts), 1):
        leader = " " + "." * max(3, 40 - len(s.title)) + " " if dotted else "  "
        toc_lines.append(f"{i} {s.title}{leader}{start}")

    def page_text(n: int, body: list[str]) -> str:
        return "\n".join([header, *body, f"{doc_id.upper()} Standard | page {n}"])

    pages = [
        Page(1, page_text(1, [title, "Industry standard", "Version 2023-12"])),
        Page(2, page_text(2, toc_lines)),
    ]
    for i, (s, start) in enumerate(zip(sections, starts), 1):
        chunks: list[list[str]] = [[] for _ in range(s.n_pages)]
        chunks[0].append(f"{i} {s.title}")
        for j, line in enumerate(s.lines):
            chunks[min(j * s.n_pages // max(1, len(s.lines)), s.n_pages - 1)].append(line)
        tables: list[list[RawTable]] = [[] for _ in range(s.n_pages)]
        for head, rows in s.tables:
            if s.n_pages >= 2 and len(rows) > 4:
                half = len(rows) // 2
                tables[s.n_pages - 2].append(RawTable(start + s.n_pages - 2, list(head), rows[:half]))
                tables[s.n_pages - 1].append(RawTable(start + s.n_pages - 1, [], rows[half:], continuation_hint=True))
            else:
                tables[s.n_pages - 1].append(RawTable(start + s.n_pages - 1, list(head), rows))
        for k in range(s.n_pages):
            n = start + k
            pages.append(Page(n, page_text(n, chunks[k]), tables[k]))
    return DocumentBundle(doc_id, title, pages)


# ---------------------------------------------------------------- truth graphs


def _entity_record(e: Entity, page: int, doc_id: str) -> dict:
    props = dict(e.properties)
    if e.metric_subtype is not None:
        props["metric_type"] = e.metric_subtype
    return {
        "id": e.id,
        "type": e.kind,
        "label": e.label,
        "description": e.description,
        "properties": props,
        "source": {"doc_id": doc_id, "page": page, "quote": e.label},
    }


def _rel_record(r: Relationship) -> dict:
    return {"subject": r.subject, "predicate": r.predicate, "object": r.object}


class _Ids:
    def __init__(self, slug: str) -> None:
        self.slug = slug
        self.counters: dict[tuple[str, int], int] = {}

    def next(self, kind: EntityKind, page: int) -> str:
        key = (kind.value, page)
        self.counters[key] = self.counters.get(key, 0) + 1
        return make_entity_id(kind, self.slug, page, self.counters[key])


def generate_corpus(
    seed: int,
    n_entities: Optional[int] = None,
    n_sections: Optional[int] = None,
    duplicates: Optional[int] = None,
    dangling: Optional[int] = None,
    doc_id: str = "syn",
) -> SyntheticCorpus:
    """Random valid ground-truth graph spread over a TOC-structured bundle.

    The graph uses all five kinds and all five predicates, so it needs at
    least six entities; smaller requests are raised to six.
    """
    rng = random.Random(seed)
    n = max(6, n_entities if n_entities is not None else rng.randint(6, 100))
    rest = n - 2
    n_cat = rng.randint(1, max(1, rest // 5))
    n_model = rng.randint(1, max(1, (rest - n_cat - 1) // 2))
    remaining = rest - n_cat - 2 * n_model
    n_input = rng.randint(1, remaining)
    n_direct = remaining - n_input
    s = n_sections if n_sections is not None else rng.randint(3, min(10, max(3, n // 4)))
    titles = rng.sample(TOPICS, s)

    # section of each structural element, then page layout
    cat_sec = [rng.randrange(s) for _ in range(n_cat)]
    metric_specs: list[tuple[MetricSubtype, int]] = []  # (subtype, category index)
    for _ in range(n_model):
        metric_specs.append((MetricSubtype.CALCULATED, rng.randrange(n_cat)))
    for _ in range(n_input):
        metric_specs.append((MetricSubtype.INPUT, rng.randrange(n_cat)))
    for _ in range(n_direct):
        metric_specs.append((MetricSubtype.DIRECT, rng.randrange(n_cat)))
    metric_sec = [cat_sec[c] if rng.random() < 0.7 else rng.randrange(s) for _, c in metric_specs]
    n_pages = [rng.randint(1, 3) for _ in range(s)]
    starts = []
    p = 3
    for k in range(s):
        starts.append(p)
        p += n_pages[k]

    ids = _Ids(doc_id)
    labels_used: set[str] = set()

    def unique_label(base: str) -> str:
        label, k = base, 2
        while normalize_label(label) in labels_used:
            label = f"{base} {chr(ord('A') + (k - 2) % 26)}{'' if k < 28 else k}"
            k += 1
        labels_used.add(normalize_label(label))
        return label

    entities: list[Entity] = []
    home: dict[str, int] = {}

    def add(e: Entity, sec: int) -> Entity:
        entities.append(e)
        home[e.id] = sec
        return e

    industry = add(
        Entity(
            ids.next(EntityKind.INDUSTRY, starts[0]), EntityKind.INDUSTRY.value, "Commercial Banks",
            "Entities that take deposits and make loans.", properties={"sector": "Financials"},
        ),
        0,
    )
    framework = add(
        Entity(
            ids.next(EntityKind.REPORTING_FRAMEWORK, starts[0]), EntityKind.REPORTING_FRAMEWORK.value,
            "SASB Standards", "Industry-specific sustainability disclosure standards.",
            properties={"name": "SASB", "version": "2023-12"},
        ),
        0,
    )
    categories = []
    for c in range(n_cat):
        label = unique_label(rng.choice(TOPICS))
        categories.append(
            add(
                Entity(
                    ids.next(EntityKind.CATEGORY, starts[cat_sec[c]]), EntityKind.CATEGORY.value, label,
                    f"Disclosure topic covering {label.lower()}.", properties={"section_title": label},
                ),
                cat_sec[c],
            )
        )
    metrics = []
    for k, ((subtype, c), sec) in enumerate(zip(metric_specs, metric_sec)):
        label = unique_label(f"{rng.choice(QUALIFIERS)} {rng.choice(MEASURES)}")
        metrics.append(
            add(
                Entity(
                    ids.next(EntityKind.METRIC, starts[sec]), EntityKind.METRIC.value, label,
                    f"{label} for the reporting period.", subtype.value,
                    properties={
                        "measurement_type": "Quantitative",
                        "unit": rng.choice(UNITS),
                        "code": f"SY-{doc_id.upper()}-{110 + k}a.{1 + k % 4}",
                    },
                ),
                sec,
            )
        )
    calculated = [m for m in metrics if m.metric_subtype == MetricSubtype.CALCULATED.value]
    inputs = [m for m in metrics if m.metric_subtype == MetricSubtype.INPUT.value]
    models = []
    model_inputs = []
    for cm in calculated:
        chosen = rng.sample(inputs, rng.randint(1, min(3, len(inputs))))
        model_inputs.append(chosen)
        var_names = ["_".join(normalize_label(x.label).split()) for x in chosen]
        models.append(
            add(
                Entity(
                    ids.next(EntityKind.MODEL, starts[home[cm.id]]), EntityKind.MODEL.value,
                    unique_label(f"Calculation of {cm.label.lower()}"),
                    f"Derives {cm.label.lower()} from its inputs.",
                    properties={"equation": " + ".join(var_names), "input_variables": var_names},
                ),
                home[cm.id],
            )
        )

    rels: list[tuple[Relationship, int]] = []

    def link(s_e: Entity, pred: Predicate, o_e: Entity) -> None:
        sec = home[s_e.id] if rng.random() < 0.5 else home[o_e.id]
        rels.append((Relationship(s_e.id, pred.value, o_e.id), sec))

    link(industry, Predicate.REPORT_USING, framework)
    for cat in categories:
        link(framework, Predicate.INCLUDE, cat)
    for (subtype, c), m in zip(metric_specs, metrics):
        link(categories[c], Predicate.CONSIST_OF, m)
    for cm, model, chosen in zip(calculated, models, model_inputs):
        link(cm, Predicate.IS_CALCULATED_BY, model)
        for im in chosen:
            link(model, Predicate.REQUIRES_INPUT_FROM, im)

    truth = KnowledgeGraph(list(entities), [r for r, _ in rels], Stage.CONSOLIDATED)

    # per-section payloads
    payload_entities: list[list[dict]] = [[] for _ in range(s)]
    payload_rels: list[list[dict]] = [[] for _ in range(s)]
    for e in entities:
        payload_entities[home[e.id]].append(_entity_record(e, starts[home[e.id]], doc_id))
    for r, sec in rels:
        payload_rels[sec].append(_rel_record(r))

    n_dup = duplicates if duplicates is not None else rng.randint(0, max(1, n // 10))
    for e in rng.sample(entities, min(n_dup, len(entities))) if s > 1 else []:
        sec = rng.choice([k for k in range(s) if k != home[e.id]])
        rec = _entity_record(e, starts[sec], doc_id)
        if rng.random() < 0.5:
            rec["description"] = ""  # sparse copy, merged from the full one
        if rng.random() < 0.5:
            payload_entities[sec].append(rec)  # same id re-emitted
            continue
        alias = ids.next(EntityKind(e.kind), starts[sec])
        rec["id"] = alias
        rec["label"] = e.label.upper()
        payload_entities[sec].append(rec)
        touching = [r for r in truth.relationships if e.id in (r.subject, r.object)]
        if touching:
            r = rng.choice(touching)
            payload_rels[sec].append(
                {
                    "subject": alias if r.subject == e.id else r.subject,
                    "predicate": r.predicate,
                    "object": alias if r.object == e.id else r.object,
                }
            )

    n_dangle = dangling if dangling is not None else rng.randint(0, 3)
    for k in range(n_dangle):
        ghost = make_entity_id(EntityKind.METRIC, doc_id, p + 100, k + 1)
        sec = rng.randrange(s)
        cat = rng.choice(categories)
        payload_rels[sec].append({"subject": cat.id, "predicate": Predicate.CONSIST_OF.value, "object": ghost})

    # page text mentions the section's elements
    specs = []
    for k in range(s):
        lines = []
        rows = []
        for rec in payload_entities[k]:
            lines.append(f"{rec['label']}: {rec['description'] or 'see table'}")
            if rec["type"] == EntityKind.METRIC.value:
                rows.append([rec["properties"]["code"], rec["label"], rec["properties"]["unit"]])
        if not lines:
            lines.append(f"General guidance on {titles[k].lower()}.")
        tables = [(["Code", "Metric", "Unit"], rows)] if rows else []
        specs.append(SectionSpec(titles[k], n_pages[k], lines, tables))
    title = f"{doc_id.upper()} Sustainability Standard"
    bundle = layout_bundle(doc_id, title, specs)

    extractions = {}
    for k in range(s):
        extractions[titles[k]] = {
            "meta": {"doc_id": doc_id, "section": titles[k]},
            "entities": payload_entities[k],
            "relationships": payload_rels[k],
        }
    correct = {(e.kind, normalize_label(e.label)) for e in entities}
    return SyntheticCorpus(
        doc_id=doc_id,
        title=title,
        truth=truth,
        bundle=bundle,
        extractions=extractions,
        correct=correct,
        section_titles=list(titles),
        planted_duplicates=n_dup,
        planted_dangling=n_dangle,
        raw_entity_count=sum(len(x) for x in payload_entities),
        raw_relationship_count=sum(len(x) for x in payload_rels),
    )


UNKNOWN_KINDS = ("Standard", "Organization", "Sector", "Requirement", "Topic", "Document", "Disclosure")
BASELINE_PREDICATES = ("uses", "reports", "contains", "relatedTo", "hasMetric", "partOf")


def adversarial_baseline_corpus(
    n_entities: int = 123,
    n_valid: int = 3,
    n_relationships: int = 161,
    n_sections: int = 10,
    seed: int = 7,
    doc_id: str = "advb",
) -> SyntheticCorpus:
    """Unconstrained-extraction look-alike: mostly invented types and predicates.

    Only ``n_valid`` entities carry ontology kinds (one Industry plus fully
    specified DirectMetrics); every relationship uses a non-ontology
    predicate, so nothing but those few entities can survive validation.
    """
    rng = random.Random(seed)
    titles = rng.sample(TOPICS, n_sections)
    records: list[tuple[dict, int]] = []
    valid: list[Entity] = []
    for k in range(n_entities):
        sec = k % n_sections
        page = 3 + sec
        if k < n_valid:
            if k == 0:
                e = Entity(f"industry_{doc_id}_{page}_{k + 1:02d}", "Industry", "Commercial Banks", "Deposit-taking institutions.")
            else:
                e = Entity(
                    f"metric_{doc_id}_{page}_{k + 1:02d}", "Metric", f"Number of data breaches {k}",
                    "Count of breaches.", MetricSubtype.DIRECT.value,
                    properties={"measurement_type": "Quantitative", "unit": "Number", "code": f"FN-CB-230a.{k}"},
                )
            valid.append(e)
            rec = _entity_record(e, page, doc_id)
        else:
            kind = UNKNOWN_KINDS[k % len(UNKNOWN_KINDS)]
            rec = {
                "id": f"e{k + 1}",
                "label": f"{kind} item {k + 1}",
                "type": kind,
                "description": f"Mentioned {kind.lower()} number {k + 1}.",
                "unit": "",
            }
        records.append((rec, sec))
    rels = []
    ids = [r["id"] for r, _ in records]
    seen = set()
    while len(rels) < n_relationships:
        a, b = rng.sample(ids, 2)
        pred = rng.choice(BASELINE_PREDICATES)
        if (a, pred, b) in seen:
            continue
        seen.add((a, pred, b))
        rels.append(({"subject": a, "predicate": pred, "object": b}, rng.randrange(n_sections)))
    extractions = {
        titles[k]: {
            "entities": [r for r, sec in records if sec == k],
            "relationships": [r for r, sec in rels if sec == k],
        }
        for k in range(n_sections)
    }
    specs = [
        SectionSpec(titles[k], 1, [f"{r['label']}: {r['description']}" for r, sec in records if sec == k])
        for k in range(n_sections)
    ]
    title = f"{doc_id.upper()} Standard"
    bundle = layout_bundle(doc_id, title, specs)
    correct = {(e.kind, normalize_label(e.label)) for e in valid}
    return SyntheticCorpus(
        doc_id=doc_id,
        title=title,
        truth=KnowledgeGraph(valid, [], Stage.CONSOLIDATED),
        bundle=bundle,
        extractions=extractions,
        correct=correct,
        section_titles=list(titles),
        raw_entity_count=n_entities,
        raw_relationship_count=n_relationships,
    )
