"""On-disk stage artifacts.

Each stage writes one JSON (or JSON Lines) file whose header records the
SHA-256 of the file it was computed from, so a run can be audited backwards
from the metrics to the original bundle. Writes go to a temporary file in the
target directory and are renamed into place, so an interrupted or failed run
never leaves a truncated artifact behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

from .consolidation import Consolidation
from .docmodel import Segment
from .extraction.core import ExtractionResult, QualityFlag, TokenUsage
from .metrics import CostLedger, QualityMetrics, compute_metrics, metrics_summary
from .model import SCHEMA_VERSION, Entity, KnowledgeGraph, Relationship
from .validation import Advisory, CascadeRecord, ValidationReport, Violation


class ArtifactError(ValueError):
    pass


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: os.PathLike | str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def write_atomic(path: os.PathLike | str, text: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, target)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return target


def read_json(path: os.PathLike | str, kind: Optional[str] = None) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ArtifactError(f"{path}: no such file") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: unreadable ({exc})") from exc
    if not isinstance(data, dict):
        raise ArtifactError(f"{path}: expected a JSON object")
    if kind is not None and data.get("kind") != kind:
        raise ArtifactError(f"{path}: expected a {kind} artifact, found {data.get('kind')!r}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ArtifactError(f"{path}: unsupported schema_version {version}")
    return data


def _envelope(kind: str, header: dict, **body: Any) -> dict:
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "header": header, **body}


# ---------------------------------------------------------------- segments


def write_segments(
    path: os.PathLike | str,
    segments: list[Segment],
    doc_id: str,
    title: str,
    source_sha256: str,
    toc_page: int,
) -> Path:
    header = {"doc_id": doc_id, "title": title, "input_sha256": source_sha256, "toc_page": toc_page}
    return write_atomic(path, dumps(_envelope("segments", header, segments=[s.to_dict() for s in segments])))


def read_segments(path: os.PathLike | str) -> tuple[dict, list[Segment]]:
    data = read_json(path, "segments")
    header = data.get("header", {})
    doc_id = header.get("doc_id", "")
    return header, [Segment.from_dict(s, doc_id=doc_id) for s in data.get("segments", [])]


# ---------------------------------------------------------------- extraction


def summary_to_dict(r: ExtractionResult) -> dict:
    return {
        "segment_id": r.segment_id,
        "failed": r.failed,
        "error": r.error,
        "calls": r.calls,
        "entities": len(r.entities),
        "relationships": len(r.relationships),
        "token_usage": r.token_usage.to_dict(),
        "quality_flags": [f.to_dict() for f in r.quality_flags],
    }


def results_to_document(results: list[ExtractionResult]) -> dict:
    """Flat element lists tagged by segment, plus one summary per segment."""
    usage = TokenUsage()
    for r in results:
        usage = usage + r.token_usage
    return {
        "entities": [{"segment_id": r.segment_id, **e.to_dict()} for r in results for e in r.entities],
        "relationships": [{"segment_id": r.segment_id, **x.to_dict()} for r in results for x in r.relationships],
        "segments": [summary_to_dict(r) for r in results],
        "failures": [{"segment_id": r.segment_id, "error": r.error} for r in results if r.failed],
        "token_usage": usage.to_dict(),
    }


def results_from_document(data: dict) -> list[ExtractionResult]:
    results: dict[str, ExtractionResult] = {}
    for d in data.get("segments", []):
        results[d["segment_id"]] = ExtractionResult(
            segment_id=d["segment_id"],
            quality_flags=[QualityFlag.from_dict(f) for f in d.get("quality_flags", [])],
            token_usage=TokenUsage.from_dict(d.get("token_usage")),
            failed=bool(d.get("failed", False)),
            error=d.get("error"),
            calls=int(d.get("calls", 0)),
        )

    def owner(d: dict) -> ExtractionResult:
        sid = d.get("segment_id", "")
        if sid not in results:
            results[sid] = ExtractionResult(sid)
        return results[sid]

    for d in data.get("entities", []):
        owner(d).entities.append(Entity.from_dict(d))
    for d in data.get("relationships", []):
        owner(d).relationships.append(Relationship.from_dict(d))
    return list(results.values())


def ledger_path_for(extraction_path: os.PathLike | str) -> Path:
    p = Path(extraction_path)
    return p.with_name(p.stem + ".ledger.json")


def write_extraction(path: os.PathLike | str, results: list[ExtractionResult], header: dict) -> Path:
    doc = _envelope("extraction", header, **results_to_document(results))
    ledger = _envelope(
        "ledger-fragment",
        {"input_sha256": header.get("input_sha256", ""), "stage": "extraction"},
        model_name=header.get("model", ""),
        token_usage=doc["token_usage"],
    )
    out = write_atomic(path, dumps(doc))
    write_atomic(ledger_path_for(path), dumps(ledger))
    return out


def read_extraction(path: os.PathLike | str) -> tuple[dict, list[ExtractionResult]]:
    data = read_json(path, "extraction")
    try:
        return data.get("header", {}), results_from_document(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed extraction file ({exc})") from exc


def read_ledger_fragment(path: os.PathLike | str) -> TokenUsage:
    return TokenUsage.from_dict(read_json(path, "ledger-fragment").get("token_usage"))


# ---------------------------------------------------------------- graphs


def write_graph(
    path: os.PathLike | str,
    graph: KnowledgeGraph,
    header: dict,
    resolution_map: Optional[dict[str, str]] = None,
    warnings: Iterable[str] = (),
) -> Path:
    body: dict[str, Any] = {"graph": graph.to_dict()}
    if resolution_map is not None:
        body["resolution_map"] = dict(sorted(resolution_map.items()))
    body["warnings"] = list(warnings)
    return write_atomic(path, dumps(_envelope("graph", header, **body)))


def write_consolidation(path: os.PathLike | str, c: Consolidation, header: dict) -> Path:
    return write_graph(path, c.graph, header, c.resolution_map, c.warnings)


def read_graph(path: os.PathLike | str) -> tuple[dict, KnowledgeGraph]:
    data = read_json(path, "graph")
    try:
        graph = KnowledgeGraph.from_dict(data["graph"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"{path}: malformed graph ({exc})") from exc
    return data.get("header", {}), graph


# ---------------------------------------------------------------- validation report


def report_records(
    report: ValidationReport,
    header: dict,
    ledger: CostLedger,
    metrics: Optional[QualityMetrics] = None,
) -> list[dict]:
    """Report as an ordered list of JSON Lines records."""
    records: list[dict] = [{"record": "header", **header}]
    for v in report.phase1_removed:
        records.append({"record": "violation", "phase": 1, **v.to_dict()})
    for c in report.phase1_cascaded:
        records.append({"record": "cascade", **c.to_dict()})
    for v in report.phase2_removed:
        records.append({"record": "violation", "phase": 2, **v.to_dict()})
    for c in report.phase2_cascaded:
        records.append({"record": "cascade", **c.to_dict()})
    for w in report.warnings:
        records.append({"record": "warning", "message": w})
    for a in report.advisories:
        records.append({"record": "advisory", **a.to_dict()})
    records.append(
        {
            "record": "summary",
            "input_counts": {"entities": report.input_counts[0], "relationships": report.input_counts[1]},
            "output_counts": {"entities": report.output_counts[0], "relationships": report.output_counts[1]},
            "per_rule_pass": {k: list(v) for k, v in sorted(report.per_rule_pass.items())},
            "semantic_calls": report.semantic_calls,
            "token_usage": report.token_usage.to_dict(),
            "ledger": ledger.to_dict(),
        }
    )
    metrics = metrics or compute_metrics(report, ledger)
    records.append({"record": "metrics", **metrics_summary(metrics, ledger, report)})
    return records


def write_report(
    path: os.PathLike | str,
    report: ValidationReport,
    header: dict,
    ledger: CostLedger,
    metrics: Optional[QualityMetrics] = None,
) -> Path:
    lines = [json.dumps(r, ensure_ascii=False) for r in report_records(report, header, ledger, metrics)]
    return write_atomic(path, "\n".join(lines) + "\n")


@dataclass
class ReportFile:
    header: dict
    report: ValidationReport
    ledger: CostLedger
    metrics: dict = field(default_factory=dict)


def read_report(path: os.PathLike | str) -> ReportFile:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        records = [json.loads(ln) for ln in lines if ln.strip()]
    except FileNotFoundError:
        raise ArtifactError(f"{path}: no such file") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: unreadable ({exc})") from exc
    report = ValidationReport()
    header: dict = {}
    ledger = CostLedger()
    metrics: dict = {}
    for rec in records:
        kind = rec.pop("record", None)
        if kind == "header":
            header = rec
        elif kind == "violation":
            phase = rec.pop("phase")
            (report.phase1_removed if phase == 1 else report.phase2_removed).append(Violation.from_dict(rec))
        elif kind == "cascade":
            c = CascadeRecord.from_dict(rec)
            (report.phase1_cascaded if c.phase == 1 else report.phase2_cascaded).append(c)
        elif kind == "warning":
            report.warnings.append(rec["message"])
        elif kind == "advisory":
            report.advisories.append(Advisory.from_dict(rec))
        elif kind == "summary":
            ic, oc = rec["input_counts"], rec["output_counts"]
            report.input_counts = (ic["entities"], ic["relationships"])
            report.output_counts = (oc["entities"], oc["relationships"])
            report.per_rule_pass = {k: (v[0], v[1]) for k, v in rec["per_rule_pass"].items()}
            report.semantic_calls = rec.get("semantic_calls", 0)
            report.token_usage = TokenUsage.from_dict(rec.get("token_usage"))
            ledger = CostLedger.from_dict(rec.get("ledger") or {})
        elif kind == "metrics":
            metrics = rec
        else:
            raise ArtifactError(f"{path}: unknown record type {kind!r}")
    return ReportFile(header, report, ledger, metrics)


def write_metrics(path: os.PathLike | str, summary: dict, header: dict) -> Path:
    return write_atomic(path, dumps(_envelope("metrics", header, metrics=summary)))


# ---------------------------------------------------------------- export

EXPORT_FORMATS = ("native", "triples")
_BASE = "urn:esgkg:"


def _iri(kind: str, name: str) -> str:
    return f"<{_BASE}{kind}:{name}>"


def _literal(value: Any) -> str:
    text = value if isinstance(value, str) else json.dumps(value, ensure_ascii=False, sort_keys=True)
    return json.dumps(text, ensure_ascii=True)


def graph_to_triples(graph: KnowledgeGraph) -> str:
    """N-Triples style lines: edges first, then attribute literals per entity."""
    lines = []
    for r in graph.relationships:
        lines.append(f"{_iri('entity', r.subject)} {_iri('predicate', r.predicate)} {_iri('entity', r.object)} .")
    for e in graph.entities:
        s = _iri("entity", e.id)
        lines.append(f"{s} {_iri('attr', 'type')} {_literal(e.kind)} .")
        lines.append(f"{s} {_iri('attr', 'label')} {_literal(e.label)} .")
        if e.description:
            lines.append(f"{s} {_iri('attr', 'description')} {_literal(e.description)} .")
        if e.metric_subtype:
            lines.append(f"{s} {_iri('attr', 'metric_type')} {_literal(e.metric_subtype)} .")
        for name in sorted(e.properties):
            lines.append(f"{s} {_iri('attr', name)} {_literal(e.properties[name])} .")
    return "".join(line + "\n" for line in lines)


def export_graph(graph_path: os.PathLike | str, fmt: str, out_path: os.PathLike | str) -> Path:
    if fmt not in EXPORT_FORMATS:
        raise ArtifactError(f"unknown export format {fmt!r}; expected one of {', '.join(EXPORT_FORMATS)}")
    header, graph = read_graph(graph_path)
    if fmt == "triples":
        return write_atomic(out_path, graph_to_triples(graph))
    new_header = {"input_sha256": sha256_file(graph_path), "source_stage": graph.stage.value}
    return write_graph(out_path, graph, new_header)
