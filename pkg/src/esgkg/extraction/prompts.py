"""Prompt construction for extraction and semantic type checks."""

from __future__ import annotations

import json
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

from ..docmodel import RawTable, Segment
from ..ontology import KIND_DEFINITIONS, SCHEMA, OntologySchema, as_kind
from .backends import ENTITY_END, ENTITY_START

SEGMENT_START = "$$$SEGMENT_START$$$"
SEGMENT_END = "$$$SEGMENT_END$$$"


class PromptMode(str, Enum):
    ONTOLOGY = "ontology"
    BASELINE = "baseline"


class EmptySegmentError(ValueError):
    pass


# Headings of the nine ontology-mode components, in emission order.
COMPONENT_TITLES: tuple[str, ...] = (
    "A. System context and extraction goal",
    "B. Ontology connection map",
    "C. Entity definitions",
    "D. Relationship rules",
    "E. ID conventions",
    "F. Extraction workflow",
    "G. Output JSON schema",
    "H. Few-shot examples",
    "I. Segment content",
)

FEWSHOT_FILES = ("fewshot_metric.txt", "fewshot_model.txt")

BASELINE_TEMPLATE = """Extract ESG metrics and related information from the document text below.

Return JSON with entities and relationships:

{{
  "entities": [
    {{"id": "...", "label": "...", "type": "...",
      "description": "...", "unit": "..."}}
  ],
  "relationships": [
    {{"subject": "...", "predicate": "...", "object": "..."}}
  ]
}}

Document: {document_name}
Section: {section_title}

Extract from this text:
{content}
"""

_SYSTEM_CONTEXT = """You extract an ESG metric knowledge graph from regulatory text (SASB, TCFD, IFRS S2 and similar).
Produce JSON that conforms to the ESGMKG ontology described below.
- Stay inside the ontology: its entity types, fields and predicates only.
- Every entity and relationship must be supported by the segment text.
- Record the document, page and quote each element comes from.
- Reply with the JSON object alone, no commentary."""

_CONNECTION_FOOTER = """No other predicates or entity types are permitted.
Each entity must take part in at least one of these relationships."""

_WORKFLOW = """Step 1 (context and categories): find the Industry and ReportingFramework the text belongs to and
turn section headings into Categories. Link Industry -ReportUsing-> ReportingFramework and
ReportingFramework -Include-> Category.
Step 2 (metrics): list every metric in the segment and set metric_type: DirectMetric when it is
reported as is, CalculatedMetric when a formula or derivation is given, InputMetric when it feeds a
formula. Link Category -ConsistOf-> Metric.
Step 3 (models): for each formula create a Model with equation and input_variables. Link
CalculatedMetric -IsCalculatedBy-> Model and Model -RequiresInputFrom-> InputMetric.
Step 4 (self-check): number of CalculatedMetrics equals number of IsCalculatedBy edges; every Model has
at least one RequiresInputFrom edge; every Quantitative metric has a unit; no entity is left unlinked."""

_OUTPUT_SCHEMA = {
    "meta": {"doc_id": "string", "segment_id": "string", "page_range": ["int", "int"]},
    "entities": [
        {
            "id": "string (see ID conventions)",
            "type": "Industry | ReportingFramework | Category | Metric | Model",
            "label": "string",
            "description": "string",
            "properties": {"<field>": "value per entity definitions; metric_type goes here for Metrics"},
            "source": {"doc_id": "string", "page": "int", "start": "int", "end": "int", "quote": "string"},
        }
    ],
    "relationships": [
        {
            "subject": "entity id",
            "predicate": "one of the connection-map predicates",
            "object": "entity id",
            "source": {"doc_id": "string", "page": "int", "quote": "string"},
        }
    ],
}


def load_fewshot(directory: Optional[Path] = None) -> str:
    """Few-shot block, read from ``directory`` or the packaged templates."""
    parts = []
    for name in FEWSHOT_FILES:
        if directory is not None:
            text = (Path(directory) / name).read_text(encoding="utf-8")
        else:
            text = resources.files("esgkg").joinpath("templates", name).read_text(encoding="utf-8")
        parts.append(text.strip())
    return "\n\n".join(parts)


def render_table(table: RawTable) -> str:
    lines = [f"[table, page {table.page}]"]
    if table.header:
        lines.append("| " + " | ".join(table.header) + " |")
    for row in table.rows:
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines)


def segment_body(segment: Segment) -> str:
    parts = [segment.content]
    parts.extend(render_table(t) for t in segment.tables)
    return "\n\n".join(p for p in parts if p)


def _component(title: str, body: str) -> str:
    return f"### {title}\n{body.strip()}\n"


def build_prompt(
    segment: Segment,
    schema: OntologySchema = SCHEMA,
    mode: PromptMode | str = PromptMode.ONTOLOGY,
    fewshot: Optional[str] = None,
    document_name: Optional[str] = None,
) -> str:
    mode = PromptMode(mode)
    body = segment_body(segment)
    if not body.strip():
        raise EmptySegmentError(f"segment {segment.id} has no content")
    doc = document_name or segment.doc_id
    if mode is PromptMode.BASELINE:
        return BASELINE_TEMPLATE.format(document_name=doc, section_title=segment.title, content=body)

    connection = "\n".join(schema.connection_lines()) + "\n\n" + _CONNECTION_FOOTER
    start, end = segment.page_range
    segment_block = "\n".join(
        [
            f"Document: {doc}",
            f"Segment: {segment.id}",
            f"Section: {segment.title}",
            f"Pages: {start}-{end}",
            "Build entities and relationships only from the text enclosed by the two markers below.",
            SEGMENT_START,
            body,
            SEGMENT_END,
        ]
    )
    bodies = (
        _SYSTEM_CONTEXT,
        "Allowed patterns (subject → predicate → object):\n" + connection,
        schema.render_entity_definitions(),
        schema.render_relationship_rules(),
        schema.render_id_conventions(),
        _WORKFLOW,
        json.dumps(_OUTPUT_SCHEMA, indent=2, ensure_ascii=False),
        fewshot if fewshot is not None else load_fewshot(),
        segment_block,
    )
    return "\n".join(_component(t, b) for t, b in zip(COMPONENT_TITLES, bodies))


def build_semantic_prompt(entity_record: dict, schema: OntologySchema = SCHEMA) -> str:
    """Yes/no check that an entity's label and description fit its assigned kind."""
    kind = as_kind(entity_record.get("type", ""))
    if kind is None:
        raise ValueError(f"no definition for kind {entity_record.get('type')!r}")
    payload = json.dumps(
        {k: entity_record.get(k, "") for k in ("id", "type", "label", "description")},
        ensure_ascii=False,
        sort_keys=True,
    )
    return "\n".join(
        [
            "You verify entity types in an ESG metric knowledge graph.",
            f"Definition of {kind.value}: {KIND_DEFINITIONS[kind]}.",
            f"Required fields for {kind.value}: {', '.join(sorted(schema.required_fields(kind)))}.",
            "Entity under review:",
            ENTITY_START,
            payload,
            ENTITY_END,
            f"Do the label and description describe a {kind.value} as defined above?",
            'Reply with JSON only: {"verdict": "yes" or "no", "reason": "<short reason>"}',
        ]
    )
