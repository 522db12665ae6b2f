from .backends import (
    BackendError,
    CompletionBackend,
    CompletionRequest,
    CompletionResponse,
    FunctionBackend,
    LiveBackend,
    OracleBackend,
    RecordingBackend,
    ReplayBackend,
)
from .core import (
    AllSegmentsFailedError,
    ExtractionResult,
    ExtractionSettings,
    QualityFlag,
    TokenUsage,
    extract_document,
    extract_segment,
    quality_check,
    total_usage,
)
from .parsing import ExtractionParseError, ParsedExtraction, parse_extraction_json, parse_verdict
from .prompts import COMPONENT_TITLES, SEGMENT_END, SEGMENT_START, PromptMode, build_prompt, build_semantic_prompt

__all__ = [
    "AllSegmentsFailedError",
    "BackendError",
    "COMPONENT_TITLES",
    "CompletionBackend",
    "CompletionRequest",
    "CompletionResponse",
    "ExtractionParseError",
    "ExtractionResult",
    "ExtractionSettings",
    "FunctionBackend",
    "LiveBackend",
    "OracleBackend",
    "ParsedExtraction",
    "PromptMode",
    "QualityFlag",
    "RecordingBackend",
    "ReplayBackend",
    "SEGMENT_END",
    "SEGMENT_START",
    "TokenUsage",
    "build_prompt",
    "build_semantic_prompt",
    "extract_document",
    "extract_segment",
    "parse_extraction_json",
    "parse_verdict",
    "quality_check",
    "total_usage",
]
