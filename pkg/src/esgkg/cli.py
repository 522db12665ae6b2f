"""Command-line entry point.

Per-stage commands (segment, extract, consolidate, validate), an end-to-end
``pipeline``, graph ``export`` and a ``synth`` corpus generator. Exit status
is 0 on success, 1 on bad input or configuration and 2 when the completion
backend failed for every segment.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import yaml

from . import artifacts as io
from .consolidation import consolidate
from .docmodel import DocumentBundle, SegmentationConfig, SegmentationError, find_toc_page, segment_document
from .extraction import (
    AllSegmentsFailedError,
    BackendError,
    CompletionBackend,
    ExtractionSettings,
    LiveBackend,
    PromptMode,
    RecordingBackend,
    ReplayBackend,
    extract_document,
    total_usage,
)
from .extraction.backends import DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE
from .metrics import EMPTY_PRICES, CostLedger, PriceTable, compute_metrics, metrics_summary
from .synth import adversarial_baseline_corpus, generate_corpus, oracle_from_truth_file
from .validation import validate_graph

logger = logging.getLogger("esgkg")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_BACKEND = 2

BACKEND_KINDS = ("live", "replay", "oracle")
DEFAULT_ENDPOINT = "https://api.anthropic.com/v1/messages"
DEFAULT_KEY_ENV = "ESGKG_API_KEY"

SEGMENTS_FILE = "segments.json"
EXTRACTION_FILE = "extraction.json"
CONSOLIDATED_FILE = "consolidated.json"
VALIDATED_FILE = "validated.json"
REPORT_FILE = "validation_report.jsonl"
METRICS_FILE = "metrics.json"


class ConfigError(ValueError):
    pass


@dataclass
class BackendConfig:
    kind: str = "oracle"
    endpoint: str = DEFAULT_ENDPOINT
    model: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    api_key_env: str = DEFAULT_KEY_ENV
    replay_dir: Optional[str] = None
    record_dir: Optional[str] = None
    truth: Optional[str] = None


@dataclass
class PipelineConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    price_table: Optional[str] = None
    mode: str = PromptMode.ONTOLOGY.value
    parallelism: int = 1
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    out: Optional[str] = None

    def __post_init__(self) -> None:
        self.check()

    def check(self) -> None:
        b = self.backend
        if b.kind not in BACKEND_KINDS:
            raise ConfigError(f"backend.kind must be one of {', '.join(BACKEND_KINDS)}, got {b.kind!r}")
        if not 0.0 <= b.temperature <= 1.0:
            raise ConfigError(f"backend.temperature must lie in [0, 1], got {b.temperature}")
        if b.max_tokens < 1:
            raise ConfigError("backend.max_tokens must be positive")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.mode not in {m.value for m in PromptMode}:
            raise ConfigError(f"mode must be ontology or baseline, got {self.mode!r}")
        s = self.segmentation
        if s.min_toc_lines < 1 or not 0.0 < s.boilerplate_ratio <= 1.0 or s.edge_lines < 0:
            raise ConfigError("segmentation thresholds out of range")

    def settings(self) -> ExtractionSettings:
        return ExtractionSettings(self.backend.temperature, self.backend.max_tokens, self.backend.model)


_INTERP_RE = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")
_SECRET_KEYS = ("api_key", "key", "token", "secret", "password")


def _check_no_secrets(node, path: str = "") -> None:
    """Literal credentials are refused; ``${VAR}`` may only name the key variable."""
    if isinstance(node, dict):
        for k, v in node.items():
            where = f"{path}.{k}" if path else str(k)
            if str(k).lower() in _SECRET_KEYS:
                m = _INTERP_RE.match(str(v)) if isinstance(v, str) else None
                if not m:
                    raise ConfigError(f"{where}: credentials may not be stored in config; use ${{VARIABLE}}")
            elif isinstance(v, str) and "${" in v:
                raise ConfigError(f"{where}: environment interpolation is only allowed for the API key")
            _check_no_secrets(v, where)
    elif isinstance(node, list):
        for i, v in enumerate(node):
            _check_no_secrets(v, f"{path}[{i}]")


def _resolve(base: Path, value: Optional[str]) -> Optional[str]:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else base / p)


def load_config(path: Optional[os.PathLike | str]) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    p = Path(path)
    try:
        data = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
    except FileNotFoundError:
        raise ConfigError(f"{p}: no such config file") from None
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"{p}: unreadable config ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{p}: config must be a mapping")
    _check_no_secrets(data)
    base = p.parent
    b = dict(data.get("backend") or {})
    key = b.pop("api_key", None)
    if key is not None:
        b["api_key_env"] = _INTERP_RE.match(key).group(1)
    known = set(BackendConfig.__dataclass_fields__)
    unknown = set(b) - known
    if unknown:
        raise ConfigError(f"{p}: unknown backend settings {sorted(unknown)}")
    for k in ("replay_dir", "record_dir", "truth"):
        b[k] = _resolve(base, b.get(k))
    seg = data.get("segmentation") or {}
    try:
        backend = BackendConfig(**b)
        backend.temperature = float(backend.temperature)
        backend.max_tokens = int(backend.max_tokens)
        return PipelineConfig(
            backend=backend,
            price_table=_resolve(base, data.get("price_table")),
            mode=str(data.get("mode", PromptMode.ONTOLOGY.value)),
            parallelism=int(data.get("parallelism", 1)),
            segmentation=SegmentationConfig(**seg),
            out=_resolve(base, data.get("out")),
        )
    except TypeError as exc:
        raise ConfigError(f"{p}: {exc}") from exc


def apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    backend = cfg.backend
    if getattr(args, "backend", None):
        backend = replace(backend, kind=args.backend)
    if getattr(args, "truth", None):
        backend = replace(backend, truth=args.truth)
    if getattr(args, "replay_dir", None):
        backend = replace(backend, replay_dir=args.replay_dir)
    if getattr(args, "record_dir", None):
        backend = replace(backend, record_dir=args.record_dir)
    return PipelineConfig(
        backend=backend,
        price_table=getattr(args, "price_table", None) or cfg.price_table,
        mode=getattr(args, "mode", None) or cfg.mode,
        parallelism=args.parallelism if getattr(args, "parallelism", None) is not None else cfg.parallelism,
        segmentation=cfg.segmentation,
        out=getattr(args, "out", None) or cfg.out,
    )


def load_price_table(path: Optional[str]) -> PriceTable:
    if path is None:
        return EMPTY_PRICES
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return PriceTable.from_dict(data)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such price table") from None
    except (OSError, yaml.YAMLError, KeyError, ArithmeticError, TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: unreadable price table ({exc})") from exc


def make_ledger(cfg: PipelineConfig) -> CostLedger:
    table = load_price_table(cfg.price_table)
    if table.models and cfg.backend.model not in table.models:
        raise ConfigError(f"price table {table.version} has no entry for model {cfg.backend.model!r}")
    return CostLedger(cfg.backend.model, table)


def make_backend(cfg: PipelineConfig) -> CompletionBackend:
    b = cfg.backend
    if b.kind == "oracle":
        if not b.truth:
            raise ConfigError("oracle backend needs a truth file (backend.truth or --truth)")
        try:
            return oracle_from_truth_file(b.truth)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"{b.truth}: unreadable truth file ({exc})") from exc
    if b.kind == "replay":
        if not b.replay_dir:
            raise ConfigError("replay backend needs backend.replay_dir or --replay-dir")
        return ReplayBackend(b.replay_dir)
    if not b.model:
        raise ConfigError("live backend needs backend.model")
    try:
        backend: CompletionBackend = LiveBackend(b.endpoint, b.model, api_key_env=b.api_key_env)
    except BackendError as exc:
        raise ConfigError(str(exc)) from exc
    if b.record_dir:
        backend = RecordingBackend(backend, b.record_dir)
    return backend


# ---------------------------------------------------------------- stages


def load_bundle(path: os.PathLike | str) -> DocumentBundle:
    data = io.read_json(path)
    try:
        return DocumentBundle.from_dict(data)
    except (KeyError, TypeError) as exc:
        raise io.ArtifactError(f"{path}: malformed bundle ({exc})") from exc


def coverage_lines(segments, bundle_last_page: int, toc_page: int) -> list[str]:
    width = max([len(s.id) for s in segments] + [7])
    lines = [f"{len(segments)} segments", f"{'segment':<{width}}  {'pages':>9}  title"]
    covered: dict[int, int] = {}
    for s in segments:
        start, end = s.page_range
        span = f"{start}-{end}" if end >= start else "(empty)"
        lines.append(f"{s.id:<{width}}  {span:>9}  {s.title}")
        for n in range(start, end + 1):
            covered[n] = covered.get(n, 0) + 1
    first = toc_page + 1
    expected = range(first, bundle_last_page + 1)
    gaps = sum(1 for n in expected if n not in covered)
    overlaps = sum(1 for c in covered.values() if c > 1)
    lines.append(
        f"coverage: pages {first}-{bundle_last_page}, {len(covered)} covered, {gaps} gaps, {overlaps} overlaps"
    )
    return lines


def run_segment(bundle_path: Path, out_path: Path, cfg: PipelineConfig) -> list:
    bundle = load_bundle(bundle_path)
    segments = segment_document(bundle, cfg.segmentation)
    toc_page = find_toc_page(bundle, cfg.segmentation)
    io.write_segments(out_path, segments, bundle.doc_id, bundle.title, io.sha256_file(bundle_path), toc_page)
    for line in coverage_lines(segments, bundle.last_page, toc_page):
        print(line)
    return segments


def run_extract(segments_path: Path, out_path: Path, cfg: PipelineConfig, backend: CompletionBackend):
    header, segments = io.read_segments(segments_path)
    meta = {
        "doc_id": header.get("doc_id", ""),
        "input_sha256": io.sha256_file(segments_path),
        "mode": cfg.mode,
        "backend": cfg.backend.kind,
        "model": cfg.backend.model,
        "temperature": cfg.backend.temperature,
        "max_tokens": cfg.backend.max_tokens,
    }
    results = extract_document(segments, backend, mode=cfg.mode, parallelism=cfg.parallelism, settings=cfg.settings())
    io.write_extraction(out_path, results, meta)
    failed = sum(1 for r in results if r.failed)
    n_e = sum(len(r.entities) for r in results)
    n_r = sum(len(r.relationships) for r in results)
    usage = total_usage(results)
    print(
        f"extracted {n_e} entities, {n_r} relationships from {len(results) - failed}/{len(results)} segments "
        f"({usage.input} input / {usage.output} output tokens)"
    )
    return results


def run_consolidate(extraction_path: Path, out_path: Path):
    header, results = io.read_extraction(extraction_path)
    c = consolidate(results)
    io.write_consolidation(
        out_path,
        c,
        {"doc_id": header.get("doc_id", ""), "input_sha256": io.sha256_file(extraction_path), "stage": "consolidated"},
    )
    n_warn = len(c.warnings)
    print(
        f"consolidated {len(c.graph.entities)} entities, {len(c.graph.relationships)} relationships "
        f"({n_warn} warning{'' if n_warn == 1 else 's'})"
    )
    return c


def run_validate(
    graph_path: Path,
    out_dir: Path,
    cfg: PipelineConfig,
    backend: CompletionBackend,
    ledger_path: Optional[Path] = None,
) -> dict:
    ledger = make_ledger(cfg)
    header, graph = io.read_graph(graph_path)
    if ledger_path is not None:
        ledger.add_stage2(io.read_ledger_fragment(ledger_path))
    validated, report = validate_graph(graph, backend, parallelism=cfg.parallelism, settings=cfg.settings())
    ledger.add_stage3(report.token_usage)
    metrics = compute_metrics(report, ledger)
    summary = metrics_summary(metrics, ledger, report)
    src = {"doc_id": header.get("doc_id", ""), "input_sha256": io.sha256_file(graph_path)}
    out_dir.mkdir(parents=True, exist_ok=True)
    io.write_graph(out_dir / VALIDATED_FILE, validated, {**src, "stage": "validated"}, warnings=report.warnings)
    io.write_report(out_dir / REPORT_FILE, report, src, ledger, metrics)
    io.write_metrics(out_dir / METRICS_FILE, summary, {**src, "report_sha256": io.sha256_file(out_dir / REPORT_FILE)})
    for line in summary_lines(summary, report):
        print(line)
    return summary


def summary_lines(summary: dict, report) -> list[str]:
    e, r = summary["entities"], summary["relationships"]
    lines = [
        f"entities: {e['extracted']} -> {e['validated']}   relationships: {r['extracted']} -> {r['validated']}",
        f"phase 1 removed {len(report.phase1_removed)}, phase 2 removed {len(report.phase2_removed)}, "
        f"cascaded {len(report.phase1_cascaded) + len(report.phase2_cascaded)}",
        f"semantic accuracy      {summary['semantic_accuracy_pct']}%",
        f"schema compliance      {summary['schema_compliance_pct']}%",
        f"relationship retention {summary['relationship_retention_pct']}%",
        f"cost per entity        ${summary['cost_per_entity_usd']}",
        f"cost waste ratio       {summary['cost_waste_ratio_pct']}%",
    ]
    for rule, (passed, total) in summary["per_rule_pass"].items():
        lines.append(f"  {rule}: {passed}/{total}")
    return lines


def _header_input(path: Path) -> Optional[str]:
    try:
        return io.read_json(path).get("header", {}).get("input_sha256")
    except io.ArtifactError:
        return None


def _fresh(artifact: Path, source: Path) -> bool:
    """True when ``artifact`` exists and was computed from ``source`` as it is now."""
    return artifact.exists() and source.exists() and _header_input(artifact) == io.sha256_file(source)


def run_pipeline(bundle_path: Path, out_dir: Path, cfg: PipelineConfig, resume: bool = False) -> dict:
    backend = make_backend(cfg)
    make_ledger(cfg)  # fail on a bad price table before spending tokens
    out_dir.mkdir(parents=True, exist_ok=True)
    seg_path, ext_path, con_path = out_dir / SEGMENTS_FILE, out_dir / EXTRACTION_FILE, out_dir / CONSOLIDATED_FILE
    if resume and _fresh(seg_path, bundle_path):
        print(f"segment: reusing {seg_path}")
    else:
        run_segment(bundle_path, seg_path, cfg)
    if resume and _fresh(ext_path, seg_path) and io.read_json(ext_path)["header"].get("mode") == cfg.mode:
        print(f"extract: reusing {ext_path}")
    else:
        run_extract(seg_path, ext_path, cfg, backend)
    if resume and _fresh(con_path, ext_path):
        print(f"consolidate: reusing {con_path}")
    else:
        run_consolidate(ext_path, con_path)
    return run_validate(con_path, out_dir, cfg, backend, io.ledger_path_for(ext_path))


# ---------------------------------------------------------------- argparse


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML pipeline config")
    p.add_argument("--mode", choices=[m.value for m in PromptMode])
    p.add_argument("--backend", choices=BACKEND_KINDS)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--price-table", dest="price_table")
    p.add_argument("--truth", help="truth file for the oracle backend")
    p.add_argument("--replay-dir", dest="replay_dir")
    p.add_argument("--record-dir", dest="record_dir", help="record live responses for later replay")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esgkg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("segment", help="split a page bundle into TOC-aligned segments")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--config")

    p = sub.add_parser("extract", help="extract entities and relationships from segments")
    p.add_argument("segments")
    p.add_argument("--out", required=True)
    _add_run_options(p)

    p = sub.add_parser("consolidate", help="merge per-segment extractions into one graph")
    p.add_argument("extraction")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="two-phase validation plus metrics")
    p.add_argument("graph")
    p.add_argument("--out", help="output directory")
    p.add_argument("--ledger", help="extraction ledger fragment for the cost totals")
    _add_run_options(p)

    p = sub.add_parser("pipeline", help="segment, extract, consolidate and validate")
    p.add_argument("bundle")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", action="store_true", help="reuse artifacts whose recorded input is unchanged")
    _add_run_options(p)

    p = sub.add_parser("export", help="export a graph file")
    p.add_argument("graph")
    p.add_argument("--format", default="native", help="native or triples")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth", help="write a synthetic bundle and its truth file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--entities", type=int)
    p.add_argument("--sections", type=int)
    p.add_argument("--adversarial", action="store_true", help="baseline-style adversarial corpus")
    p.add_argument("--doc-id", dest="doc_id", default="syn")
    p.add_argument("--out", required=True)
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    return apply_overrides(load_config(args.config), args)


def _dispatch(args: argparse.Namespace) -> int:
    cmd = args.command
    if cmd == "segment":
        run_segment(Path(args.bundle), Path(args.out), load_config(args.config))
    elif cmd == "extract":
        cfg = _config(args)
        run_extract(Path(args.segments), Path(args.out), cfg, make_backend(cfg))
    elif cmd == "consolidate":
        run_consolidate(Path(args.extraction), Path(args.out))
    elif cmd == "validate":
        cfg = _config(args)
        if not cfg.out:
            raise ConfigError("validate needs --out or an `out` config entry")
        run_validate(Path(args.graph), Path(cfg.out), cfg, make_backend(cfg), Path(args.ledger) if args.ledger else None)
    elif cmd == "pipeline":
        cfg = _config(args)
        if not cfg.out:
            raise ConfigError("pipeline needs --out or an `out` config entry")
        run_pipeline(Path(args.bundle), Path(cfg.out), cfg, resume=args.resume)
    elif cmd == "export":
        path = io.export_graph(args.graph, args.format, args.out)
        print(f"wrote {path}")
    elif cmd == "synth":
        if args.adversarial:
            corpus = adversarial_baseline_corpus(seed=args.seed, doc_id=args.doc_id)
        else:
            corpus = generate_corpus(args.seed, args.entities, args.sections, doc_id=args.doc_id)
        bundle_path, truth_path = corpus.write(args.out)
        print(f"wrote {bundle_path} ({len(corpus.bundle.pages)} pages) and {truth_path}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return _dispatch(args)
    except AllSegmentsFailedError as exc:
        reasons = sorted({r.error or "" for r in exc.results})
        print(f"error: {exc}: {'; '.join(reasons)}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, io.ArtifactError, SegmentationError, BackendError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
