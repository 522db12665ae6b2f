"""Closed ESG metric knowledge-graph schema.

The registry below is the single definition shared by the prompt builder and
the validators: five entity kinds, five predicates with their legal endpoint
patterns, seven structural rules and the deterministic ID convention.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union


class EntityKind(str, Enum):
    INDUSTRY = "Industry"
    REPORTING_FRAMEWORK = "ReportingFramework"
    CATEGORY = "Category"
    METRIC = "Metric"
    MODEL = "Model"


class MetricSubtype(str, Enum):
    DIRECT = "DirectMetric"
    CALCULATED = "CalculatedMetric"
    INPUT = "InputMetric"


class Predicate(str, Enum):
    REPORT_USING = "ReportUsing"
    INCLUDE = "Include"
    CONSIST_OF = "ConsistOf"
    IS_CALCULATED_BY = "IsCalculatedBy"
    REQUIRES_INPUT_FROM = "RequiresInputFrom"


KindLike = Union[EntityKind, str]
SubtypeLike = Union[MetricSubtype, str, None]


@dataclass(frozen=True)
class PredicateSpec:
    predicate: Predicate
    subject_kind: EntityKind
    object_kind: EntityKind
    subject_subtype: Optional[MetricSubtype] = None
    object_subtype: Optional[MetricSubtype] = None

    def endpoint_label(self, side: str) -> str:
        kind = self.subject_kind if side == "subject" else self.object_kind
        subtype = self.subject_subtype if side == "subject" else self.object_subtype
        return subtype.value if subtype else kind.value

    def pattern(self) -> str:
        return (
            f"{self.endpoint_label('subject')} → {self.predicate.value} → "
            f"{self.endpoint_label('object')}"
        )


@dataclass(frozen=True)
class FieldSpec:
    entity_kind: EntityKind
    field_name: str
    required: bool
    description: str = ""


@dataclass(frozen=True)
class StructuralRule:
    index: int
    description: str
    checker_id: str


CONNECTION_MAP: tuple[PredicateSpec, ...] = (
    PredicateSpec(Predicate.REPORT_USING, EntityKind.INDUSTRY, EntityKind.REPORTING_FRAMEWORK),
    PredicateSpec(Predicate.INCLUDE, EntityKind.REPORTING_FRAMEWORK, EntityKind.CATEGORY),
    PredicateSpec(Predicate.CONSIST_OF, EntityKind.CATEGORY, EntityKind.METRIC),
    PredicateSpec(
        Predicate.IS_CALCULATED_BY,
        EntityKind.METRIC,
        EntityKind.MODEL,
        subject_subtype=MetricSubtype.CALCULATED,
    ),
    PredicateSpec(
        Predicate.REQUIRES_INPUT_FROM,
        EntityKind.MODEL,
        EntityKind.METRIC,
        object_subtype=MetricSubtype.INPUT,
    ),
)

SHARED_FIELDS: tuple[str, ...] = ("id", "type", "label", "source")

_K = EntityKind
FIELD_SPECS: tuple[FieldSpec, ...] = (
    FieldSpec(_K.INDUSTRY, "sector", False, "industry sector"),
    FieldSpec(_K.INDUSTRY, "country", False, "jurisdiction"),
    FieldSpec(_K.INDUSTRY, "standard_reference", False, "standard the industry is defined in"),
    FieldSpec(_K.REPORTING_FRAMEWORK, "name", True, "framework name"),
    FieldSpec(_K.REPORTING_FRAMEWORK, "version", False, "framework version"),
    FieldSpec(_K.REPORTING_FRAMEWORK, "year", False, "publication year"),
    FieldSpec(_K.REPORTING_FRAMEWORK, "publisher", False, "issuing body"),
    FieldSpec(_K.CATEGORY, "section_title", True, "heading of the disclosure topic"),
    FieldSpec(_K.CATEGORY, "section_id", False, "section number"),
    FieldSpec(_K.CATEGORY, "page_range", False, "pages covered"),
    FieldSpec(_K.METRIC, "measurement_type", True, "Quantitative or Qualitative"),
    FieldSpec(_K.METRIC, "metric_type", True, "DirectMetric, CalculatedMetric or InputMetric"),
    FieldSpec(_K.METRIC, "unit", True, "unit of measure"),
    FieldSpec(_K.METRIC, "code", True, "metric code as printed"),
    FieldSpec(_K.METRIC, "description", True, "what the metric measures"),
    FieldSpec(_K.METRIC, "disaggregations", False, "required breakdowns"),
    FieldSpec(_K.MODEL, "description", True, "what the calculation produces"),
    FieldSpec(_K.MODEL, "equation", True, "formula as stated"),
    FieldSpec(_K.MODEL, "input_variables", True, "list of input variable names"),
)

MEASUREMENT_TYPES: tuple[str, ...] = ("Quantitative", "Qualitative")

STRUCTURAL_RULES: tuple[StructuralRule, ...] = (
    StructuralRule(1, "Each Industry uses exactly one ReportingFramework.", "industry_single_framework"),
    StructuralRule(2, "Each ReportingFramework includes one or more Categories.", "framework_has_category"),
    StructuralRule(
        3,
        "Each Category contains one or more Metrics; a Metric belongs to exactly one Category.",
        "category_metric_membership",
    ),
    StructuralRule(
        4,
        "Each CalculatedMetric has exactly one IsCalculatedBy link to a Model; "
        "DirectMetric and InputMetric must not have IsCalculatedBy links.",
        "calculated_metric_model_link",
    ),
    StructuralRule(5, "Each Model has one or more InputMetrics linked by RequiresInputFrom.", "model_has_inputs"),
    StructuralRule(6, "Quantitative metrics must specify a unit.", "quantitative_unit"),
    StructuralRule(
        7,
        "No Category, Metric, or Model may be orphaned (must participate in at least one valid edge).",
        "no_orphans",
    ),
)

KIND_DEFINITIONS: dict[EntityKind, str] = {
    EntityKind.INDUSTRY: "an industry or sector whose companies disclose under a reporting framework",
    EntityKind.REPORTING_FRAMEWORK: "a disclosure standard or framework issued by a standard setter",
    EntityKind.CATEGORY: "a disclosure topic or section grouping related metrics within a framework",
    EntityKind.METRIC: (
        "an ESG disclosure metric a reporting entity must report, either directly, "
        "as the result of a calculation, or as an input to one; not a general financial "
        "statement line item"
    ),
    EntityKind.MODEL: "a calculation method: an equation with named input variables producing a metric",
}

ID_PREFIXES: dict[EntityKind, str] = {
    EntityKind.METRIC: "metric",
    EntityKind.MODEL: "model",
    EntityKind.CATEGORY: "category",
    EntityKind.INDUSTRY: "industry",
    EntityKind.REPORTING_FRAMEWORK: "framework",
}

_SLUG_RE = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")


def as_kind(value: KindLike) -> Optional[EntityKind]:
    """Map a kind name onto the enum; ``None`` for anything outside the schema."""
    if isinstance(value, EntityKind):
        return value
    try:
        return EntityKind(value)
    except ValueError:
        return None


def as_subtype(value: SubtypeLike) -> Optional[MetricSubtype]:
    if value is None or isinstance(value, MetricSubtype):
        return value
    try:
        return MetricSubtype(value)
    except ValueError:
        return None


def predicate_is_legal(
    subject_kind: KindLike,
    predicate: Union[Predicate, str],
    object_kind: KindLike,
    subject_subtype: SubtypeLike = None,
    object_subtype: SubtypeLike = None,
) -> bool:
    """True iff the triple pattern is one of the five connection-map rows.

    Subtype refinements apply only where the map names one: the subject of
    ``IsCalculatedBy`` must be a CalculatedMetric and the object of
    ``RequiresInputFrom`` an InputMetric. Unknown names are simply illegal.
    """
    s_kind, o_kind = as_kind(subject_kind), as_kind(object_kind)
    if s_kind is None or o_kind is None:
        return False
    pred = predicate.value if isinstance(predicate, Predicate) else predicate
    s_sub, o_sub = as_subtype(subject_subtype), as_subtype(object_subtype)
    for spec in CONNECTION_MAP:
        if spec.predicate.value != pred:
            continue
        if spec.subject_kind is not s_kind or spec.object_kind is not o_kind:
            return False
        if spec.subject_subtype is not None and s_sub is not spec.subject_subtype:
            return False
        if spec.object_subtype is not None and o_sub is not spec.object_subtype:
            return False
        return True
    return False


def required_fields(kind: KindLike) -> frozenset[str]:
    k = as_kind(kind)
    if k is None:
        raise ValueError(f"unknown entity kind: {kind!r}")
    own = {f.field_name for f in FIELD_SPECS if f.entity_kind is k and f.required}
    return frozenset(SHARED_FIELDS) | own


def optional_fields(kind: KindLike) -> frozenset[str]:
    k = as_kind(kind)
    if k is None:
        raise ValueError(f"unknown entity kind: {kind!r}")
    return frozenset(f.field_name for f in FIELD_SPECS if f.entity_kind is k and not f.required)


def make_entity_id(kind: KindLike, doc_slug: str, page: int, ordinal: int) -> str:
    """Deterministic ``<prefix>_<doc>_<page>_<nn>`` identifier.

    Ordinals below 100 are zero-padded to two digits; larger ordinals keep all
    their digits.
    """
    k = as_kind(kind)
    if k is None:
        raise ValueError(f"unknown entity kind: {kind!r}")
    if not doc_slug or not _SLUG_RE.match(doc_slug):
        raise ValueError(f"doc_slug must be a non-empty lowercase token, got {doc_slug!r}")
    if page < 1:
        raise ValueError(f"page must be >= 1, got {page}")
    if ordinal < 1:
        raise ValueError(f"ordinal must be >= 1, got {ordinal}")
    return f"{ID_PREFIXES[k]}_{doc_slug}_{page}_{ordinal:02d}"


def slugify(text: str) -> str:
    """Lowercase token usable as the ``doc`` part of an entity id."""
    slug = re.sub(r"[^a-z0-9]+", "_", text.lower()).strip("_")
    return slug or "doc"


@dataclass(frozen=True)
class OntologySchema:
    kinds: tuple[EntityKind, ...] = tuple(EntityKind)
    subtypes: tuple[MetricSubtype, ...] = tuple(MetricSubtype)
    connection_map: tuple[PredicateSpec, ...] = CONNECTION_MAP
    field_specs: tuple[FieldSpec, ...] = FIELD_SPECS
    rules: tuple[StructuralRule, ...] = STRUCTURAL_RULES
    id_prefixes: dict = field(default_factory=lambda: dict(ID_PREFIXES), compare=False, hash=False)

    def is_known_kind(self, kind: KindLike) -> bool:
        return as_kind(kind) is not None

    def required_fields(self, kind: KindLike) -> frozenset[str]:
        return required_fields(kind)

    def optional_fields(self, kind: KindLike) -> frozenset[str]:
        return optional_fields(kind)

    def predicate_is_legal(self, *args, **kwargs) -> bool:
        return predicate_is_legal(*args, **kwargs)

    def kind_fields(self, kind: EntityKind) -> list[FieldSpec]:
        return [f for f in self.field_specs if f.entity_kind is kind]

    def connection_lines(self) -> list[str]:
        return [spec.pattern() for spec in self.connection_map]

    def render_entity_definitions(self) -> str:
        lines = [f"All entities share: {', '.join(SHARED_FIELDS)}."]
        lines.append("  source = {doc_id, page, start, end, quote}")
        for kind in self.kinds:
            parts = []
            for f in self.kind_fields(kind):
                suffix = "" if f.required else " (optional)"
                parts.append(f"{f.field_name}{suffix}")
            heading = kind.value
            if kind is EntityKind.METRIC:
                heading += " (" + " / ".join(s.value for s in self.subtypes) + ")"
            lines.append(f"{heading}: {', '.join(parts)}.")
            if kind is EntityKind.METRIC:
                lines.append(f"  measurement_type ∈ {{{', '.join(MEASUREMENT_TYPES)}}}")
                lines.append(f"  metric_type ∈ {{{', '.join(s.value for s in self.subtypes)}}}")
        return "\n".join(lines)

    def render_relationship_rules(self) -> str:
        return "\n".join(f"({r.index}) {r.description}" for r in self.rules)

    def render_id_conventions(self) -> str:
        lines = ["Identifiers are deterministic: <prefix>_<doc>_<page>_<nn>."]
        lines.append("  <doc> is the lowercase document slug, <page> the page the entity is")
        lines.append("  defined on, <nn> a two-digit ordinal within that page (01, 02, ...).")
        for kind in self.kinds:
            lines.append(f"  {kind.value}: {self.id_prefixes[kind]}_{{doc}}_{{page}}_{{nn}}")
        lines.append("Reuse an identifier whenever the same entity is referenced again.")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "entity_kinds": [k.value for k in self.kinds],
            "metric_subtypes": [s.value for s in self.subtypes],
            "shared_fields": list(SHARED_FIELDS),
            "fields": {
                k.value: {
                    "required": sorted(self.required_fields(k)),
                    "optional": sorted(self.optional_fields(k)),
                }
                for k in self.kinds
            },
            "predicates": [
                {
                    "predicate": s.predicate.value,
                    "subject": s.subject_kind.value,
                    "subject_subtype": s.subject_subtype.value if s.subject_subtype else None,
                    "object": s.object_kind.value,
                    "object_subtype": s.object_subtype.value if s.object_subtype else None,
                }
                for s in self.connection_map
            ],
            "rules": [
                {"index": r.index, "description": r.description, "checker_id": r.checker_id}
                for r in self.rules
            ],
            "id_prefixes": {k.value: p for k, p in self.id_prefixes.items()},
        }

    def to_document(self) -> str:
        """Machine-readable schema document (stable JSON)."""
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


SCHEMA = OntologySchema()
