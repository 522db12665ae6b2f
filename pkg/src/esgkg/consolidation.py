"""Merge per-segment extraction results into one graph.

Three passes run in order: id resolution, entity deduplication and
relationship deduplication. Matching is exact on normalised labels; there is
no fuzzy matching.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Sequence

from .extraction.core import ExtractionResult
from .model import Entity, KnowledgeGraph, Provenance, Relationship, Stage, is_empty
from .ontology import EntityKind

logger = logging.getLogger(__name__)

IdResolutionMap = dict[str, str]


def normalize_label(label: str) -> str:
    return " ".join(label.casefold().split())


class _UnionFind:
    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def _occurrences(results: Sequence[ExtractionResult]) -> list[tuple[int, Entity]]:
    return [(i, e) for i, r in enumerate(results) if not r.failed for e in r.entities]


def _alias_key(e: Entity):
    label = normalize_label(e.label)
    if not label:
        return None
    if e.kind == EntityKind.METRIC.value:
        code = normalize_label(str(e.properties.get("code") or ""))
        if not code:
            return None
        return (e.kind, label, code)
    return (e.kind, label, None)


def resolve_ids(results: Sequence[ExtractionResult]) -> IdResolutionMap:
    """Map every entity id to the canonical id of its alias class.

    Occurrences sharing an id always alias. Occurrences from different
    segments alias when they have the same kind and normalised label (plus,
    for Metrics, the same non-empty code). The canonical id is the
    lexicographically smallest id in the class, so the map has no chains.
    """
    occ = _occurrences(results)
    uf = _UnionFind(len(occ))
    by_id: dict[str, int] = {}
    groups: dict[Any, list[int]] = defaultdict(list)
    for n, (_seg, e) in enumerate(occ):
        if e.id in by_id:
            uf.union(by_id[e.id], n)
        else:
            by_id[e.id] = n
        key = _alias_key(e)
        if key is not None:
            groups[key].append(n)
    for members in groups.values():
        if len({occ[n][0] for n in members}) > 1:
            for n in members[1:]:
                uf.union(members[0], n)
    classes: dict[int, list[str]] = defaultdict(list)
    for n, (_seg, e) in enumerate(occ):
        classes[uf.find(n)].append(e.id)
    mapping: IdResolutionMap = {}
    for ids in classes.values():
        canonical = min(ids)
        for i in ids:
            mapping[i] = canonical
    return mapping


def _values_differ(a: Any, b: Any) -> bool:
    if isinstance(a, str) and isinstance(b, str):
        return a.strip() != b.strip()
    return a != b


def _merge_value(name: str, current: Any, incoming: Any, ident: str, warnings: list[str]) -> Any:
    if is_empty(current):
        return incoming if not is_empty(incoming) else current
    if not is_empty(incoming) and _values_differ(current, incoming):
        warnings.append(f"merge-conflict {ident}.{name}: kept {current!r}, discarded {incoming!r}")
    return current


def _merge_provenance(a: list[Provenance], b: list[Provenance]) -> list[Provenance]:
    out = list(a)
    for p in b:
        if p not in out:
            out.append(p)
    return out


def dedupe_entities(
    results: Sequence[ExtractionResult],
    id_map: IdResolutionMap,
    warnings: list[str] | None = None,
) -> dict[str, Entity]:
    """One entity per canonical id.

    Fields are unioned; a non-empty value beats an empty one, otherwise the
    earlier segment's value stands and the disagreement is logged.
    """
    warnings = warnings if warnings is not None else []
    merged: dict[str, Entity] = {}
    for _seg, e in _occurrences(results):
        cid = id_map.get(e.id, e.id)
        cur = merged.get(cid)
        if cur is None:
            merged[cid] = Entity(
                id=cid,
                kind=e.kind,
                label=e.label,
                description=e.description,
                metric_subtype=e.metric_subtype,
                properties=dict(e.properties),
                provenance=list(e.provenance),
            )
            continue
        if cur.kind != e.kind:
            warnings.append(f"merge-conflict {cid}.type: kept {cur.kind!r}, discarded {e.kind!r}")
        if normalize_label(cur.label) != normalize_label(e.label):
            cur.label = _merge_value("label", cur.label, e.label, cid, warnings)
        cur.description = _merge_value("description", cur.description, e.description, cid, warnings)
        cur.metric_subtype = _merge_value("metric_type", cur.metric_subtype, e.metric_subtype, cid, warnings)
        for name in e.properties:
            cur.properties[name] = _merge_value(name, cur.properties.get(name), e.properties[name], cid, warnings)
        cur.provenance = _merge_provenance(cur.provenance, e.provenance)
    return merged


def dedupe_relationships(
    results: Sequence[ExtractionResult],
    id_map: IdResolutionMap,
    warnings: list[str] | None = None,
) -> list[Relationship]:
    """Rewrite endpoints to canonical ids and collapse identical triples."""
    warnings = warnings if warnings is not None else []
    merged: dict[tuple[str, str, str], Relationship] = {}
    for r in (r for res in results if not res.failed for r in res.relationships):
        s, o = id_map.get(r.subject, r.subject), id_map.get(r.object, r.object)
        if s == o:
            warnings.append(f"self-loop dropped: {r.subject} {r.predicate} {r.object} -> {s}")
            continue
        key = (s, r.predicate, o)
        if key in merged:
            merged[key].provenance = _merge_provenance(merged[key].provenance, r.provenance)
        else:
            merged[key] = Relationship(s, r.predicate, o, list(r.provenance))
    return list(merged.values())


@dataclass
class Consolidation:
    graph: KnowledgeGraph
    resolution_map: IdResolutionMap
    warnings: list[str] = field(default_factory=list)


def consolidate(results: Sequence[ExtractionResult]) -> Consolidation:
    warnings: list[str] = []
    id_map = resolve_ids(results)
    entities = dedupe_entities(results, id_map, warnings)
    relationships = []
    for r in dedupe_relationships(results, id_map, warnings):
        missing = [x for x in (r.subject, r.object) if x not in entities]
        if missing:
            warnings.append(f"dangling relationship dropped: {r.subject} {r.predicate} {r.object} ({', '.join(missing)} undefined)")
            continue
        relationships.append(r)
    for w in warnings:
        logger.info(w)
    graph = KnowledgeGraph(list(entities.values()), relationships, Stage.CONSOLIDATED)
    return Consolidation(graph, id_map, warnings)


def as_single_result(graph: KnowledgeGraph, segment_id: str = "consolidated") -> ExtractionResult:
    """Re-wrap a graph as one extraction result (for re-consolidation)."""
    return ExtractionResult(segment_id, list(graph.entities), list(graph.relationships))
