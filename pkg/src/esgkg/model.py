"""Graph elements shared by extraction, consolidation and validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional

from .ontology import EntityKind, MetricSubtype, as_kind, as_subtype

SCHEMA_VERSION = 1


class Stage(str, Enum):
    RAW = "raw"
    CONSOLIDATED = "consolidated"
    VALIDATED = "validated"


@dataclass(frozen=True)
class Provenance:
    doc_id: str
    segment_id: str
    segment_title: str
    page_range: tuple[int, int]
    quote: Optional[str] = None
    start: Optional[int] = None
    end: Optional[int] = None

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "doc_id": self.doc_id,
            "segment_id": self.segment_id,
            "segment_title": self.segment_title,
            "page_range": list(self.page_range),
        }
        if self.quote is not None:
            d["quote"] = self.quote
        if self.start is not None:
            d["start"] = self.start
        if self.end is not None:
            d["end"] = self.end
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Provenance":
        pr = d.get("page_range") or [0, 0]
        return cls(
            doc_id=d.get("doc_id", ""),
            segment_id=d.get("segment_id", ""),
            segment_title=d.get("segment_title", ""),
            page_range=(int(pr[0]), int(pr[1])),
            quote=d.get("quote"),
            start=d.get("start"),
            end=d.get("end"),
        )


def is_empty(value: Any) -> bool:
    if value is None:
        return True
    if isinstance(value, str):
        return not value.strip()
    if isinstance(value, (list, tuple, dict, set)):
        return len(value) == 0
    return False


@dataclass
class Entity:
    id: str
    kind: str
    label: str = ""
    description: str = ""
    metric_subtype: Optional[str] = None
    properties: dict[str, Any] = field(default_factory=dict)
    provenance: list[Provenance] = field(default_factory=list)

    @property
    def known_kind(self) -> Optional[EntityKind]:
        return as_kind(self.kind)

    @property
    def subtype(self) -> Optional[MetricSubtype]:
        return as_subtype(self.metric_subtype)

    def field_value(self, name: str) -> Any:
        """Value of a schema field, wherever the entity stores it."""
        if name == "id":
            return self.id
        if name == "type":
            return self.kind
        if name == "label":
            return self.label
        if name == "description":
            return self.description
        if name == "metric_type":
            return self.metric_subtype
        if name == "source":
            return self.provenance
        return self.properties.get(name)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {
            "id": self.id,
            "type": self.kind,
            "label": self.label,
            "description": self.description,
        }
        if self.metric_subtype is not None:
            d["metric_type"] = self.metric_subtype
        d["properties"] = {k: self.properties[k] for k in sorted(self.properties)}
        d["provenance"] = [p.to_dict() for p in self.provenance]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Entity":
        return cls(
            id=d["id"],
            kind=d["type"],
            label=d.get("label", ""),
            description=d.get("description", ""),
            metric_subtype=d.get("metric_type"),
            properties=dict(d.get("properties", {})),
            provenance=[Provenance.from_dict(p) for p in d.get("provenance", [])],
        )


@dataclass
class Relationship:
    subject: str
    predicate: str
    object: str
    provenance: list[Provenance] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "predicate": self.predicate,
            "object": self.object,
            "provenance": [p.to_dict() for p in self.provenance],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Relationship":
        return cls(
            subject=d["subject"],
            predicate=d["predicate"],
            object=d["object"],
            provenance=[Provenance.from_dict(p) for p in d.get("provenance", [])],
        )


@dataclass
class KnowledgeGraph:
    """Entities and relationships at one pipeline stage.

    Entities are kept as an ordered list rather than an id map so that a
    graph read from disk can still carry id collisions for the uniqueness
    rule to report.
    """

    entities: list[Entity] = field(default_factory=list)
    relationships: list[Relationship] = field(default_factory=list)
    stage: Stage = Stage.RAW

    def entity_index(self) -> dict[str, Entity]:
        """First occurrence of each id."""
        index: dict[str, Entity] = {}
        for e in self.entities:
            index.setdefault(e.id, e)
        return index

    def entity_ids(self) -> set[str]:
        return {e.id for e in self.entities}

    def endpoints_closed(self) -> bool:
        ids = self.entity_ids()
        return all(r.subject in ids and r.object in ids for r in self.relationships)

    def ids_unique(self) -> bool:
        return len(self.entity_ids()) == len(self.entities)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage.value,
            "entities": [e.to_dict() for e in self.entities],
            "relationships": [r.to_dict() for r in self.relationships],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KnowledgeGraph":
        return cls(
            entities=[Entity.from_dict(e) for e in d.get("entities", [])],
            relationships=[Relationship.from_dict(r) for r in d.get("relationships", [])],
            stage=Stage(d.get("stage", "raw")),
        )


def subgraph(graph: KnowledgeGraph, entities: Iterable[Entity], stage: Optional[Stage] = None) -> KnowledgeGraph:
    """Restrict ``graph`` to ``entities``, keeping only relationships with both endpoints."""
    kept = list(entities)
    ids = {e.id for e in kept}
    rels = [r for r in graph.relationships if r.subject in ids and r.object in ids]
    return KnowledgeGraph(kept, rels, stage or graph.stage)
