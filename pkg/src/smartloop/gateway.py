"""Dispatch of generation requests to a chat-completions server or a mock.

Wire format (one user message holding the image and the prompt)::

    {"model": ..., "messages": [{"role": "user", "content": [
        {"type": "image", "data": "<base64 PNG>"},
        {"type": "text", "text": "<prompt>"}]}],
     "temperature": ..., "top_p": ...}

The reply is read from ``choices[0].message.content``. The bearer token, if
any, comes from the environment variable named by ``BackendConfig.api_key_env``
(``SMARTLOOP_API_KEY`` by default) and is never written to provenance.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

from .augment import encode_png
from .errors import (
    EmptyOutputError,
    GenerationError,
    ManifestError,
    ProtocolError,
    TransportError,
    ValidationError,
)
from .prompts import GenerationRequest

log = logging.getLogger(__name__)

API_KEY_ENV = "SMARTLOOP_API_KEY"


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "remote" or "mock"
    endpoint: str = ""
    model_id: str = "mock"
    max_parallel: int = 8
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 0.5
    fixtures: str = ""  # mock: fingerprint table
    script: str = ""  # mock: per-sample scripted templates
    api_key_env: str = API_KEY_ENV

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValidationError(f"backend kind must be 'remote' or 'mock', got {self.kind!r}")
        if self.max_parallel < 1:
            raise ValidationError("max_parallel must be >= 1")
        if self.max_attempts < 1:
            raise ValidationError("max_attempts must be >= 1")
        if self.kind == "remote" and not self.endpoint:
            raise ValidationError("remote backend needs an endpoint")

    @property
    def backend_id(self) -> str:
        return f"{self.kind}:{self.model_id}"


@dataclass
class GenerationResult:
    fingerprint: str
    rationale_text: str | None
    latency: float = 0.0
    attempts: int = 0
    error: str | None = None
    error_kind: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class BatchResult:
    results: list
    counts: dict = field(default_factory=dict)

    def __iter__(self):
        return iter(self.results)

    def __len__(self):
        return len(self.results)

    def __getitem__(self, i):
        return self.results[i]


def fingerprint(request: GenerationRequest) -> str:
    """Content hash over prompt text, image pixels and decoding parameters."""
    img = np.ascontiguousarray(request.image, dtype=np.uint8)
    head = json.dumps(
        {
            "prompt": request.prompt_text,
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "shape": list(img.shape),
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    h = hashlib.sha256(head.encode("utf-8"))
    h.update(b"\x00")
    h.update(img.tobytes())
    return h.hexdigest()


class _Retryable(Exception):
    def __init__(self, exc):
        self.exc = exc


class MockBackend:
    """Deterministic scripted backend.

    Lookup order: exact fingerprint table, then the per-sample script keyed
    by (sample_id, kind) where kind is "positive", "negative" or "naive",
    then ``default`` (a callable of the request). Script texts may use the
    placeholders ``{answer}``, ``{label}`` and ``{text}``, filled from the
    request's target answer.
    """

    def __init__(self, table=None, script=None, default=None, delay: float = 0.0):
        self.table = dict(table or {})
        self.script = dict(script or {})
        self.default = default
        self.delay = delay
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_in_flight = 0
        self.calls = []  # (fingerprint, start, end) in completion order

    @classmethod
    def from_files(cls, fixtures="", script="", **kw) -> "MockBackend":
        table = {}
        if fixtures:
            for obj in _read_jsonl(fixtures, ("fingerprint", "text")):
                table[obj["fingerprint"]] = obj["text"]
        entries = {}
        if script:
            for obj in _read_jsonl(script, ("sample_id", "kind", "text")):
                entries[(obj["sample_id"], obj["kind"])] = obj["text"]
        return cls(table, entries, **kw)

    def _lookup(self, request, fp):
        if fp in self.table:
            return self.table[fp]
        kind = request.polarity or "naive"
        tmpl = self.script.get((request.sample_id, kind))
        if tmpl is not None:
            t = request.target_answer
            if t is None:
                return tmpl
            return tmpl.replace("{answer}", t.render()).replace("{label}", t.label).replace("{text}", t.text)
        if self.default is not None:
            return self.default(request)
        return ""

    def complete(self, request: GenerationRequest, fp: str) -> str:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
        start = time.monotonic()
        try:
            if self.delay:
                time.sleep(self.delay)
            return self._lookup(request, fp)
        finally:
            end = time.monotonic()
            with self._lock:
                self.in_flight -= 1
                self.calls.append((fp, start, end))


class RemoteBackend:
    """HTTP+JSON chat-completions client."""

    def __init__(self, config: BackendConfig, transport=None):
        self.config = config
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(config.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=config.timeout, headers=headers, transport=transport)

    def close(self):
        self._client.close()

    def payload(self, request: GenerationRequest) -> dict:
        return build_payload(request, self.config.model_id)

    def complete(self, request: GenerationRequest, fp: str) -> str:
        try:
            resp = self._client.post(self.config.endpoint, json=self.payload(request))
        except httpx.TransportError as exc:  # includes timeouts
            raise _Retryable(TransportError(f"transport failure: {exc}", fp)) from exc
        if resp.status_code >= 500:
            raise _Retryable(ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}", fp))
        if not 200 <= resp.status_code < 300:
            raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}", fp)
        try:
            text = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProtocolError(f"unexpected response body: {resp.text[:200]}", fp) from None
        return text if isinstance(text, str) else ""


def build_payload(request: GenerationRequest, model_id: str) -> dict:
    return {
        "model": model_id,
        "messages": [
            {
                "role": "user",
                "content": [
                    {"type": "image", "data": base64.b64encode(encode_png(request.image)).decode("ascii")},
                    {"type": "text", "text": request.prompt_text},
                ],
            }
        ],
        "temperature": request.decoding.temperature,
        "top_p": request.decoding.top_p,
    }


def make_backend(config: BackendConfig, transport=None):
    if config.kind == "mock":
        return MockBackend.from_files(config.fixtures, config.script)
    return RemoteBackend(config, transport=transport)


def generate(request: GenerationRequest, config: BackendConfig, backend=None, sleep=time.sleep) -> GenerationResult:
    """Run one request with retries; raises a ``GenerationError`` on failure."""
    backend = backend if backend is not None else make_backend(config)
    fp = fingerprint(request)
    start = time.monotonic()
    last = None
    for attempt in range(1, config.max_attempts + 1):
        try:
            text = backend.complete(request, fp)
        except _Retryable as r:
            last = r.exc
            log.warning("attempt %d/%d for %s failed: %s", attempt, config.max_attempts, fp[:12], last)
            if attempt < config.max_attempts:
                sleep(config.backoff_base * 2 ** (attempt - 1))
            continue
        if not text or not text.strip():
            raise EmptyOutputError("backend returned an empty completion", fp)
        return GenerationResult(fp, text, time.monotonic() - start, attempt)
    raise last


def generate_batch(requests, config: BackendConfig, backend=None, sleep=time.sleep) -> BatchResult:
    """Run requests with at most ``config.max_parallel`` in flight.

    Results come back in request order. Failures are recorded on their
    result instead of aborting the batch.
    """
    requests = list(requests)
    owned = backend is None
    backend = make_backend(config) if owned else backend

    def one(req):
        try:
            return generate(req, config, backend, sleep)
        except GenerationError as exc:
            return GenerationResult(exc.fingerprint or fingerprint(req), None, 0.0, 0, str(exc), exc.kind)

    try:
        if config.max_parallel == 1 or len(requests) <= 1:
            results = [one(r) for r in requests]
        else:
            with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
                results = list(pool.map(one, requests))
    finally:
        if owned and hasattr(backend, "close"):
            backend.close()
    counts = {"total": len(results), "ok": sum(r.ok for r in results)}
    for r in results:
        if not r.ok:
            counts[r.error_kind] = counts.get(r.error_kind, 0) + 1
    return BatchResult(results, counts)


def _read_jsonl(path, keys):
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(path, lineno, None, f"malformed JSON ({exc.msg})") from None
            for k in keys:
                if not isinstance(obj, dict) or not isinstance(obj.get(k), str):
                    raise ManifestError(path, lineno, k, "missing or non-string field")
            out.append(obj)
    return out


def write_fixture_table(entries, path) -> None:
    """Write a mock fingerprint table as {"fingerprint", "text"} lines."""
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for fp, text in entries:
            fh.write(json.dumps({"fingerprint": fp, "text": text}, ensure_ascii=False) + "\n")
