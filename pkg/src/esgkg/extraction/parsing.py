from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Optional

from ..model import Entity, Provenance, Relationship

_FENCE_RE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n(.*?)\n?\s*```\s*$", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")
_ENTITY_KEYS = {"id", "type", "label", "description", "source", "properties", "metric_type", "provenance"}


class ExtractionParseError(ValueError):
    pass


@dataclass
class ParsedExtraction:
    entities: list[Entity]
    relationships: list[Relationship]
    meta: dict = field(default_factory=dict)
    repaired: bool = False


def strip_fences(body: str) -> str:
    m = _FENCE_RE.match(body)
    return m.group(1) if m else body


def _repair(text: str) -> Any:
    """Single repair pass: keep the first complete JSON object, drop trailing commas."""
    start = text.find("{")
    if start < 0:
        raise ExtractionParseError("no JSON object in response")
    candidate = _TRAILING_COMMA_RE.sub(r"\1", text[start:])
    try:
        obj, _ = json.JSONDecoder().raw_decode(candidate)
    except ValueError as exc:
        raise ExtractionParseError(f"unrepairable payload: {exc}") from exc
    return obj


def _source_provenance(src: Any) -> list[Provenance]:
    """Partial provenance from a payload ``source`` block; completed later."""
    if not isinstance(src, dict):
        return []
    page = src.get("page")
    try:
        page = int(page) if page is not None else 0
    except (TypeError, ValueError):
        page = 0

    def _int(v: Any) -> Optional[int]:
        try:
            return int(v) if v is not None else None
        except (TypeError, ValueError):
            return None

    quote = src.get("quote")
    return [
        Provenance(
            doc_id=str(src.get("doc_id", "")),
            segment_id="",
            segment_title="",
            page_range=(page, page),
            quote=str(quote) if quote is not None else None,
            start=_int(src.get("start")),
            end=_int(src.get("end")),
        )
    ]


def _text(v: Any) -> str:
    if v is None:
        return ""
    return v if isinstance(v, str) else json.dumps(v, ensure_ascii=False)


def _entity(rec: dict, position: int) -> Entity:
    props = dict(rec.get("properties") or {}) if isinstance(rec.get("properties"), dict) else {}
    for k, v in rec.items():
        if k not in _ENTITY_KEYS:
            props.setdefault(k, v)
    subtype = rec.get("metric_type", props.pop("metric_type", None))
    description = rec.get("description")
    if description is None:
        description = props.pop("description", "")
    ident = rec.get("id")
    return Entity(
        id=str(ident) if ident not in (None, "") else f"unidentified_{position:03d}",
        kind=_text(rec.get("type")),
        label=_text(rec.get("label") or rec.get("name")),
        description=_text(description),
        metric_subtype=None if subtype is None else _text(subtype),
        properties=props,
        provenance=_source_provenance(rec.get("source")),
    )


def parse_extraction_json(body: str) -> ParsedExtraction:
    """Parse a model response into entities, relationships and meta.

    Accepts the object bare or inside a code fence. On a strict-parse failure
    one repair is tried; anything still unreadable raises
    :class:`ExtractionParseError`. Unknown entity types are kept verbatim.
    """
    text = strip_fences(body.strip())
    repaired = False
    try:
        data = json.loads(text)
    except ValueError:
        data = _repair(text)
        repaired = True
    if not isinstance(data, dict):
        raise ExtractionParseError("payload is not a JSON object")
    ents, rels = data.get("entities"), data.get("relationships")
    if ents is None and rels is None:
        raise ExtractionParseError("payload has neither entities nor relationships")
    if not isinstance(ents or [], list) or not isinstance(rels or [], list):
        raise ExtractionParseError("entities/relationships must be lists")
    entities = [_entity(rec, i + 1) for i, rec in enumerate(ents or []) if isinstance(rec, dict)]
    relationships = []
    for rec in rels or []:
        if not isinstance(rec, dict):
            continue
        relationships.append(
            Relationship(
                subject=_text(rec.get("subject")),
                predicate=_text(rec.get("predicate")),
                object=_text(rec.get("object")),
                provenance=_source_provenance(rec.get("source")),
            )
        )
    meta = data.get("meta") if isinstance(data.get("meta"), dict) else {}
    return ParsedExtraction(entities, relationships, dict(meta), repaired)


def parse_verdict(body: str) -> Optional[bool]:
    """``True``/``False`` for a yes/no verdict payload, ``None`` if unreadable."""
    text = strip_fences(body.strip())
    try:
        data = json.loads(text)
    except ValueError:
        try:
            data = _repair(text)
        except ExtractionParseError:
            data = None
    if isinstance(data, dict):
        v = data.get("verdict", data.get("is_correct"))
        if isinstance(v, bool):
            return v
        if isinstance(v, str) and v.strip().lower() in ("yes", "no", "true", "false"):
            return v.strip().lower() in ("yes", "true")
        return None
    word = text.strip().strip(".").lower()
    if word in ("yes", "no"):
        return word == "yes"
    return None
