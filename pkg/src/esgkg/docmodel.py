"""Page-structured document bundles and TOC-aligned segmentation."""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

logger = logging.getLogger(__name__)


class SegmentationError(ValueError):
    pass


class BundleError(SegmentationError):
    pass


class TocNotFoundError(SegmentationError):
    pass


class TocUnparseableError(SegmentationError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    min_toc_lines: int = 3
    boilerplate_ratio: float = 0.6
    # Only the first/last N non-empty lines of a page are header/footer candidates.
    edge_lines: int = 2


DEFAULT_CONFIG = SegmentationConfig()


@dataclass
class RawTable:
    page: int
    header: list[str] = field(default_factory=list)
    rows: list[list[str]] = field(default_factory=list)
    continuation_hint: bool = False

    def __post_init__(self) -> None:
        if self.header:
            width = len(self.header)
            for row in self.rows:
                if len(row) != width:
                    raise BundleError(
                        f"table on page {self.page}: row arity {len(row)} != header arity {width}"
                    )

    @property
    def arity(self) -> int:
        if self.header:
            return len(self.header)
        return len(self.rows[0]) if self.rows else 0

    def to_dict(self) -> dict:
        return {
            "page": self.page,
            "header": list(self.header),
            "rows": [list(r) for r in self.rows],
            "continuation_hint": self.continuation_hint,
        }

    @classmethod
    def from_dict(cls, d: dict, page: Optional[int] = None) -> "RawTable":
        return cls(
            page=int(d.get("page", page if page is not None else 0)),
            header=[str(c) for c in d.get("header", [])],
            rows=[[str(c) for c in row] for row in d.get("rows", [])],
            continuation_hint=bool(d.get("continuation_hint", False)),
        )


@dataclass
class Page:
    number: int
    text: str = ""
    tables: list[RawTable] = field(default_factory=list)


@dataclass
class DocumentBundle:
    doc_id: str
    title: str
    pages: list[Page]

    def __post_init__(self) -> None:
        prev = None
        for p in self.pages:
            if p.number < 1:
                raise BundleError(f"page numbers are 1-based, got {p.number}")
            if prev is not None and p.number != prev + 1:
                raise BundleError(f"page numbers must be contiguous: {prev} then {p.number}")
            prev = p.number

    @property
    def first_page(self) -> int:
        return self.pages[0].number

    @property
    def last_page(self) -> int:
        return self.pages[-1].number

    def page(self, number: int) -> Optional[Page]:
        if not self.pages or number < self.first_page or number > self.last_page:
            return None
        return self.pages[number - self.first_page]

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "title": self.title,
            "pages": [
                {
                    "number": p.number,
                    "text": p.text,
                    "tables": [
                        {"header": t.header, "rows": t.rows, "continuation_hint": t.continuation_hint}
                        for t in p.tables
                    ],
                }
                for p in self.pages
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DocumentBundle":
        try:
            pages = [
                Page(
                    number=int(p["number"]),
                    text=p.get("text", ""),
                    tables=[RawTable.from_dict(t, page=int(p["number"])) for t in p.get("tables", [])],
                )
                for p in d["pages"]
            ]
            return cls(doc_id=str(d["doc_id"]), title=str(d.get("title", "")), pages=pages)
        except (KeyError, TypeError) as exc:
            raise BundleError(f"malformed bundle: {exc}") from exc


@dataclass(frozen=True)
class TocEntry:
    number: str
    title: str
    start_page: int
    end_page: int

    @property
    def is_empty(self) -> bool:
        return self.end_page < self.start_page


@dataclass
class Segment:
    id: str
    title: str
    page_range: tuple[int, int]
    content: str
    tables: list[RawTable] = field(default_factory=list)
    section_number: str = ""
    doc_id: str = ""
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "section_number": self.section_number,
            "title": self.title,
            "page_range": list(self.page_range),
            "content": self.content,
            "tables": [t.to_dict() for t in self.tables],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict, doc_id: str = "") -> "Segment":
        pr = d["page_range"]
        return cls(
            id=d["id"],
            title=d.get("title", ""),
            page_range=(int(pr[0]), int(pr[1])),
            content=d.get("content", ""),
            tables=[RawTable.from_dict(t) for t in d.get("tables", [])],
            section_number=d.get("section_number", ""),
            doc_id=d.get("doc_id", doc_id),
            warnings=list(d.get("warnings", [])),
        )


_HEADING_RE = re.compile(r"^\s*(?:table\s+of\s+)?contents\s*:?\s*$", re.IGNORECASE)
_TOC_LINE_RE = re.compile(
    r"^\s*(?:(?P<number>\d+(?:\.\d+)*)\.?\s+)?"
    r"(?P<title>\S.*?)"
    r"(?P<leader>\s*(?:[.·…]\s*){2,}|\s+)"
    r"(?P<page>\d{1,4})\s*$"
)
_PAGE_NUMBER_RE = re.compile(
    r"^[-–—]?\s*(?:page\s+)?\d{1,4}(?:\s*(?:of|/)\s*\d{1,4})?\s*[-–—]?$", re.IGNORECASE
)
_LETTER_RE = re.compile(r"[^\W\d_]")


@dataclass(frozen=True)
class _TocLine:
    number: Optional[str]
    title: str
    page: int
    dotted: bool


def _match_toc_line(line: str) -> Optional[_TocLine]:
    if _HEADING_RE.match(line):
        return None
    m = _TOC_LINE_RE.match(line)
    if not m:
        return None
    title = m.group("title").strip()
    if not _LETTER_RE.search(title):
        return None
    page = int(m.group("page"))
    if page < 1:
        return None
    leader = m.group("leader")
    dotted = any(ch in leader for ch in ".·…")
    return _TocLine(m.group("number"), title, page, dotted)


def find_toc_page(bundle: DocumentBundle, config: SegmentationConfig = DEFAULT_CONFIG) -> int:
    """First page that looks like a table of contents.

    A page qualifies with at least ``min_toc_lines`` page-number-terminated
    lines, provided it either carries a contents heading or at least that many
    of its lines use dotted leaders.
    """
    boilerplate = document_boilerplate(bundle, config)
    for page in bundle.pages:
        lines = [ln for ln in page.text.splitlines() if _line_key(_collapse(ln)) not in boilerplate]
        heading = any(_HEADING_RE.match(line) for line in lines)
        parsed = [t for t in map(_match_toc_line, lines) if t is not None]
        dotted = sum(1 for t in parsed if t.dotted)
        if len(parsed) >= config.min_toc_lines and (heading or dotted >= config.min_toc_lines):
            return page.number
    raise TocNotFoundError(f"{bundle.doc_id}: no table-of-contents page found")


def parse_toc(bundle: DocumentBundle, toc_page: int, config: SegmentationConfig = DEFAULT_CONFIG) -> list[TocEntry]:
    """Parse entries from the TOC page and derive end pages.

    Each entry ends the page before the next one starts; the last ends on the
    bundle's last page. When two entries share a start page the earlier one is
    left with an empty range. Running headers and footers (which often end in
    a page number) are not entries.
    """
    page = bundle.page(toc_page)
    if page is None:
        raise TocUnparseableError(f"page {toc_page} is not in the bundle")
    boilerplate = document_boilerplate(bundle, config)
    lines = [ln for ln in page.text.splitlines() if _line_key(_collapse(ln)) not in boilerplate]
    raw = [t for t in map(_match_toc_line, lines) if t is not None]
    if len(raw) < 2:
        raise TocUnparseableError(f"{bundle.doc_id}: only {len(raw)} TOC entries on page {toc_page}")
    numbered = [
        (t.number if t.number else str(i + 1), t.title, t.page) for i, t in enumerate(raw)
    ]
    numbered.sort(key=lambda item: item[2])  # stable: ties keep document order
    entries = []
    for i, (number, title, start) in enumerate(numbered):
        end = numbered[i + 1][2] - 1 if i + 1 < len(numbered) else bundle.last_page
        entries.append(TocEntry(number, title, start, end))
    return entries


def merge_multipage_tables(tables: Iterable[RawTable]) -> list[RawTable]:
    """Join tables split across consecutive pages.

    A table continues the previous one when it sits on the next page, has the
    same arity, and either repeats the header or is hinted as a continuation.
    The merged table keeps the first page's number.
    """
    merged: list[RawTable] = []
    last_pages: list[int] = []
    for t in tables:
        if merged:
            prev = merged[-1]
            same_header = bool(t.header) and t.header == prev.header
            if (
                t.page == last_pages[-1] + 1
                and t.arity == prev.arity
                and (same_header or t.continuation_hint)
            ):
                extra = [list(r) for r in t.rows]
                if t.header and not same_header:
                    # a continuation whose first row was read as a header
                    extra.insert(0, list(t.header))
                prev.rows.extend(extra)
                last_pages[-1] = t.page
                continue
        merged.append(
            RawTable(t.page, list(t.header), [list(r) for r in t.rows], t.continuation_hint)
        )
        last_pages.append(t.page)
    return merged


def _collapse(line: str) -> str:
    return " ".join(line.split())


def _line_key(line: str) -> str:
    return re.sub(r"\d+", "#", line.casefold())


def repeated_edge_lines(pages: list[list[str]], config: SegmentationConfig = DEFAULT_CONFIG) -> frozenset[str]:
    """Digit-masked header/footer lines repeated on enough pages."""
    if len(pages) < 2:
        return frozenset()
    counts: Counter[str] = Counter()
    for lines in pages:
        nonblank = [ln for ln in lines if ln]
        edge = nonblank[: config.edge_lines] + nonblank[-config.edge_lines :]
        counts.update({_line_key(ln) for ln in edge})
    threshold = config.boilerplate_ratio * len(pages)
    return frozenset(k for k, c in counts.items() if c >= 2 and c >= threshold)


def document_boilerplate(bundle: DocumentBundle, config: SegmentationConfig = DEFAULT_CONFIG) -> frozenset[str]:
    """Header/footer keys repeated across the whole bundle."""
    return repeated_edge_lines([[_collapse(ln) for ln in p.text.splitlines()] for p in bundle.pages], config)


def clean_text(
    raw: str,
    boilerplate: Iterable[str] = (),
    config: SegmentationConfig = DEFAULT_CONFIG,
) -> str:
    """Remove layout noise from extracted page text.

    ``raw`` may hold several pages separated by form feeds; header/footer
    lines repeated across pages are dropped, as are lines whose digit-masked
    form is in ``boilerplate``. Whitespace runs collapse and bare page numbers
    disappear. The result has no form feeds, so a second pass is a no-op.
    """
    pages = [[_collapse(ln) for ln in chunk.splitlines()] for chunk in raw.split("\f")]
    drop = set(boilerplate) | repeated_edge_lines(pages, config)
    out: list[str] = []
    for lines in pages:
        for ln in lines:
            if ln and (_line_key(ln) in drop or _PAGE_NUMBER_RE.match(ln)):
                continue
            if not ln and (not out or not out[-1]):
                continue
            out.append(ln)
    while out and not out[-1]:
        out.pop()
    return "\n".join(out)


def extract_title(bundle: DocumentBundle) -> str:
    if bundle.title:
        return bundle.title
    if bundle.pages:
        for line in bundle.pages[0].text.splitlines():
            if line.strip():
                return _collapse(line)
    return bundle.doc_id


def generate_segment_id(number: str, taken: set[str]) -> str:
    base = "seg_" + re.sub(r"[^0-9A-Za-z]+", "_", number).strip("_").lower()
    candidate, n = base, 2
    while candidate in taken:
        candidate = f"{base}_{n}"
        n += 1
    taken.add(candidate)
    return candidate


def segment_document(bundle: DocumentBundle, config: SegmentationConfig = DEFAULT_CONFIG) -> list[Segment]:
    toc_page = find_toc_page(bundle, config)
    entries = parse_toc(bundle, toc_page, config)
    boilerplate = document_boilerplate(bundle, config)
    taken: set[str] = set()
    segments = []
    for entry in entries:
        seg_id = generate_segment_id(entry.number, taken)
        start = max(entry.start_page, bundle.first_page)
        end = min(entry.end_page, bundle.last_page)
        pages = [bundle.page(n) for n in range(start, end + 1)]
        pages = [p for p in pages if p is not None]
        warnings = []
        if not pages:
            msg = f"section {entry.number} '{entry.title}' has no pages in the bundle"
            logger.warning("%s: %s", bundle.doc_id, msg)
            warnings.append(msg)
        raw = "\f".join(p.text for p in pages)
        tables = merge_multipage_tables(
            t for p in pages for t in sorted(p.tables, key=lambda t: t.page)
        )
        segments.append(
            Segment(
                id=seg_id,
                title=entry.title,
                page_range=(entry.start_page, entry.end_page),
                content=clean_text(raw, boilerplate, config),
                tables=tables,
                section_number=entry.number,
                doc_id=bundle.doc_id,
                warnings=warnings,
            )
        )
    return segments
