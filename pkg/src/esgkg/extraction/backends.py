"""Completion backends.

Every backend exposes ``complete(request) -> CompletionResponse`` and raises
:class:`BackendError` on transport or authentication failure. Three are
provided: an HTTP client for a hosted model, a replay backend reading
recorded responses keyed by prompt hash, and an oracle that answers from
known ground truth so whole runs can be checked offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol

import httpx

DEFAULT_TEMPERATURE = 0.1
DEFAULT_MAX_TOKENS = 16000

ENTITY_START = "$$$ENTITY_START$$$"
ENTITY_END = "$$$ENTITY_END$$$"


class BackendError(RuntimeError):
    """Transport, authentication or lookup failure in a completion backend."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_tokens: int = DEFAULT_MAX_TOKENS
    model_name: str = ""


@dataclass(frozen=True)
class CompletionResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0


class CompletionBackend(Protocol):
    name: str

    def complete(self, request: CompletionRequest) -> CompletionResponse: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    """Rough token count (four characters per token) for offline backends."""
    return math.ceil(len(text) / 4)


class _Counting:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls = 0

    def _count(self) -> None:
        with self._lock:
            self.calls += 1


class LiveBackend(_Counting):
    """Messages-style HTTP endpoint (Anthropic wire format)."""

    name = "live"

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        api_key: Optional[str] = None,
        api_key_env: str = "ESGKG_API_KEY",
        timeout: float = 300.0,
        transport: Optional[httpx.BaseTransport] = None,
    ) -> None:
        super().__init__()
        key = api_key if api_key is not None else os.environ.get(api_key_env)
        if not key:
            raise BackendError(f"API key variable {api_key_env} is not set")
        self.endpoint = endpoint
        self.model_name = model_name
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={
                "x-api-key": key,
                "anthropic-version": "2023-06-01",
                "content-type": "application/json",
            },
        )

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self._count()
        body = {
            "model": request.model_name or self.model_name,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
        }
        try:
            resp = self._client.post(self.endpoint, json=body)
        except httpx.HTTPError as exc:
            raise BackendError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise BackendError(f"authentication failed ({resp.status_code})")
        if resp.status_code >= 400:
            raise BackendError(f"backend returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            text = "".join(
                block.get("text", "") for block in data.get("content", []) if block.get("type", "text") == "text"
            )
            usage = data.get("usage", {})
        except (ValueError, AttributeError) as exc:
            raise BackendError(f"unreadable backend response: {exc}") from exc
        return CompletionResponse(
            text=text,
            input_tokens=int(usage.get("input_tokens", 0)),
            output_tokens=int(usage.get("output_tokens", 0)),
        )

    def close(self) -> None:
        self._client.close()


class ReplayBackend(_Counting):
    """Serves recorded responses from ``<directory>/<sha256(prompt)>.json``."""

    name = "replay"

    def __init__(self, directory: os.PathLike | str) -> None:
        super().__init__()
        self.directory = Path(directory)

    def path_for(self, prompt: str) -> Path:
        return self.directory / f"{prompt_hash(prompt)}.json"

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self._count()
        path = self.path_for(request.prompt)
        if not path.exists():
            raise BackendError(f"no recorded response for prompt {path.stem[:12]}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return CompletionResponse(
            text=data["text"],
            input_tokens=int(data.get("input_tokens", 0)),
            output_tokens=int(data.get("output_tokens", 0)),
        )


class RecordingBackend(_Counting):
    """Wraps another backend and stores each response in replay format."""

    name = "recording"

    def __init__(self, inner: CompletionBackend, directory: os.PathLike | str) -> None:
        super().__init__()
        self.inner = inner
        self.directory = Path(directory)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self._count()
        resp = self.inner.complete(request)
        self.directory.mkdir(parents=True, exist_ok=True)
        record = {
            "prompt_sha256": prompt_hash(request.prompt),
            "text": resp.text,
            "input_tokens": resp.input_tokens,
            "output_tokens": resp.output_tokens,
        }
        path = self.directory / f"{record['prompt_sha256']}.json"
        path.write_text(json.dumps(record, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return resp


class FunctionBackend(_Counting):
    """Backend driven by a plain callable; handy for fixtures."""

    name = "function"

    def __init__(self, fn: Callable[[CompletionRequest], str | CompletionResponse]) -> None:
        super().__init__()
        self.fn = fn

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self._count()
        out = self.fn(request)
        if isinstance(out, CompletionResponse):
            return out
        return CompletionResponse(out, estimate_tokens(request.prompt), estimate_tokens(out))


_SECTION_RE = re.compile(r"^Section: (.*)$", re.MULTILINE)


def normalize_label(label: str) -> str:
    return " ".join(label.casefold().split())


def entity_from_semantic_prompt(prompt: str) -> Optional[dict]:
    start = prompt.find(ENTITY_START)
    end = prompt.find(ENTITY_END)
    if start < 0 or end < start:
        return None
    try:
        return json.loads(prompt[start + len(ENTITY_START) : end])
    except ValueError:
        return None


class OracleBackend(_Counting):
    """Answers from ground truth.

    Extraction prompts are routed by their ``Section:`` line to the payload
    planted for that section title. Semantic checks affirm an entity iff its
    (type, normalised label) pair is in ``correct``; with ``correct=None``
    every entity is affirmed.
    """

    name = "oracle"

    def __init__(
        self,
        extractions: Mapping[str, dict],
        correct: Optional[set[tuple[str, str]]] = None,
    ) -> None:
        super().__init__()
        self.extractions = dict(extractions)
        self.correct = correct

    def _respond(self, request: CompletionRequest, payload: dict) -> CompletionResponse:
        text = json.dumps(payload, ensure_ascii=False)
        return CompletionResponse(text, estimate_tokens(request.prompt), estimate_tokens(text))

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        self._count()
        entity = entity_from_semantic_prompt(request.prompt)
        if entity is not None:
            ok = self.correct is None or (
                entity.get("type", ""),
                normalize_label(entity.get("label", "")),
            ) in self.correct
            verdict = {"verdict": "yes" if ok else "no", "reason": "oracle ground truth"}
            return self._respond(request, verdict)
        m = _SECTION_RE.search(request.prompt)
        payload = self.extractions.get(m.group(1).strip()) if m else None
        if payload is None:
            payload = {"meta": {}, "entities": [], "relationships": []}
        return self._respond(request, payload)
