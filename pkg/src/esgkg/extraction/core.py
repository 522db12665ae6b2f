"""Per-segment extraction and document-level fan-out."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from ..docmodel import Segment
from ..model import Entity, Provenance, Relationship, is_empty
from ..ontology import SCHEMA, OntologySchema
from .backends import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_TEMPERATURE,
    BackendError,
    CompletionBackend,
    CompletionRequest,
)
from .parsing import ExtractionParseError, parse_extraction_json
from .prompts import PromptMode, build_prompt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenUsage:
    input: int = 0
    output: int = 0

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.input + other.input, self.output + other.output)

    def to_dict(self) -> dict:
        return {"input": self.input, "output": self.output}

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "TokenUsage":
        d = d or {}
        return cls(int(d.get("input", 0)), int(d.get("output", 0)))


@dataclass(frozen=True)
class QualityFlag:
    code: str
    target: str
    detail: str

    def to_dict(self) -> dict:
        return {"code": self.code, "target": self.target, "detail": self.detail}

    @classmethod
    def from_dict(cls, d: dict) -> "QualityFlag":
        return cls(d["code"], d.get("target", ""), d.get("detail", ""))


@dataclass(frozen=True)
class ExtractionSettings:
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    model_name: str = ""
    fewshot: Optional[str] = None


@dataclass
class ExtractionResult:
    segment_id: str
    entities: list[Entity] = field(default_factory=list)
    relationships: list[Relationship] = field(default_factory=list)
    quality_flags: list[QualityFlag] = field(default_factory=list)
    token_usage: TokenUsage = field(default_factory=TokenUsage)
    failed: bool = False
    error: Optional[str] = None
    calls: int = 0


class AllSegmentsFailedError(RuntimeError):
    def __init__(self, results: list[ExtractionResult]):
        super().__init__(f"all {len(results)} segments failed extraction")
        self.results = results


def segment_provenance(segment: Segment) -> Provenance:
    return Provenance(
        doc_id=segment.doc_id,
        segment_id=segment.id,
        segment_title=segment.title,
        page_range=tuple(segment.page_range),
    )


def _attach(partial: list[Provenance], segment: Segment) -> list[Provenance]:
    base = segment_provenance(segment)
    if not partial:
        return [base]
    src = partial[0]
    page = src.page_range[0]
    start, end = segment.page_range
    pages = (page, page) if start <= page <= end else base.page_range
    return [replace(base, page_range=pages, quote=src.quote, start=src.start, end=src.end)]


def quality_check(
    result: ExtractionResult,
    schema: OntologySchema = SCHEMA,
    prior_ids: Iterable[str] = (),
) -> list[QualityFlag]:
    """Advisory warnings for one segment; nothing is rejected here."""
    flags: list[QualityFlag] = []
    if not result.entities:
        flags.append(QualityFlag("no-entities", result.segment_id, "segment produced zero entities"))
    for e in result.entities:
        if not schema.is_known_kind(e.kind):
            flags.append(QualityFlag("unknown-kind", e.id, f"entity type {e.kind!r} is not in the ontology"))
            continue
        for name in sorted(schema.required_fields(e.kind)):
            if is_empty(e.field_value(name)):
                flags.append(QualityFlag("missing-field", e.id, f"{e.kind} is missing {name}"))
    known = set(prior_ids) | {e.id for e in result.entities}
    for r in result.relationships:
        for end in (r.subject, r.object):
            if end not in known:
                flags.append(
                    QualityFlag("unknown-reference", f"{r.subject}|{r.predicate}|{r.object}", f"{end} is not defined")
                )
    return flags


def _request(prompt: str, settings: ExtractionSettings) -> CompletionRequest:
    return CompletionRequest(prompt, settings.temperature, settings.max_tokens, settings.model_name)


def extract_segment(
    segment: Segment,
    backend: CompletionBackend,
    schema: OntologySchema = SCHEMA,
    mode: PromptMode | str = PromptMode.ONTOLOGY,
    settings: ExtractionSettings = ExtractionSettings(),
) -> ExtractionResult:
    """Prompt, call, parse and annotate one segment.

    A response that fails to parse (after the parser's own repair) is
    re-requested once; a second failure marks the segment failed.
    :class:`BackendError` propagates.
    """
    prompt = build_prompt(segment, schema, mode, fewshot=settings.fewshot)
    usage = TokenUsage()
    calls = 0
    parsed = None
    error = None
    for _attempt in range(2):
        resp = backend.complete(_request(prompt, settings))
        calls += 1
        usage = usage + TokenUsage(resp.input_tokens, resp.output_tokens)
        try:
            parsed = parse_extraction_json(resp.text)
            break
        except ExtractionParseError as exc:
            error = str(exc)
            logger.warning("segment %s: unparseable response (%s)", segment.id, exc)
    if parsed is None:
        return ExtractionResult(
            segment.id, token_usage=usage, failed=True, error=f"parse-failure: {error}", calls=calls
        )

    entities = []
    for e in parsed.entities:
        e.provenance = _attach(e.provenance, segment)
        entities.append(e)
    relationships = []
    flags = []
    for r in parsed.relationships:
        if r.subject == r.object:
            flags.append(QualityFlag("self-loop", r.subject, f"dropped {r.predicate} edge from an entity to itself"))
            continue
        r.provenance = _attach(r.provenance, segment)
        relationships.append(r)
    result = ExtractionResult(segment.id, entities, relationships, token_usage=usage, calls=calls)
    result.quality_flags = flags + quality_check(result, schema)
    return result


def extract_document(
    segments: Sequence[Segment],
    backend: CompletionBackend,
    schema: OntologySchema = SCHEMA,
    mode: PromptMode | str = PromptMode.ONTOLOGY,
    parallelism: int = 1,
    settings: ExtractionSettings = ExtractionSettings(),
) -> list[ExtractionResult]:
    """Extract every segment, at most ``parallelism`` at a time.

    Results come back in segment order whatever the completion order. A
    segment that errors becomes a failure record; only a run in which every
    segment fails raises :class:`AllSegmentsFailedError`.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    def work(seg: Segment) -> ExtractionResult:
        if not seg.content.strip() and not seg.tables:
            return ExtractionResult(seg.id, failed=True, error="empty-segment")
        try:
            return extract_segment(seg, backend, schema, mode, settings)
        except BackendError as exc:
            logger.error("segment %s: backend error: %s", seg.id, exc)
            return ExtractionResult(seg.id, failed=True, error=f"backend-error: {exc}", calls=1)

    if parallelism == 1:
        results = [work(s) for s in segments]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(work, segments))

    # cross-segment references are judged against earlier segments only
    seen: set[str] = set()
    for res in results:
        if res.failed:
            continue
        local = [f for f in res.quality_flags if f.code == "self-loop"]
        res.quality_flags = local + quality_check(res, schema, prior_ids=seen)
        seen.update(e.id for e in res.entities)

    if results and all(r.failed for r in results):
        raise AllSegmentsFailedError(results)
    return results


def total_usage(results: Iterable[ExtractionResult]) -> TokenUsage:
    total = TokenUsage()
    for r in results:
        total = total + r.token_usage
    return total
