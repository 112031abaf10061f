"""Yes/No verdict probabilities from a frozen vision-language evaluator.

Two backends share one small interface (``query(prompt, sample)``):

* :class:`HttpEvaluator` talks to any OpenAI-style ``/chat/completions``
  server that can return per-token ``top_logprobs`` (vLLM, SGLang, ...).
* :class:`MockEvaluator` is a deterministic lookup table for tests and dry
  runs.

Probabilities are read straight off the first generated token and are never
renormalised over {Yes, No}; a label missing from the top-k list gets
``probability_floor`` so downstream log ratios stay finite.
"""

from __future__ import annotations

import base64
import hashlib
import itertools
import json
import logging
import math
import mimetypes
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence
from urllib.parse import urlparse

import httpx

from .errors import ConfigError, DataError, ProtocolError, TransportError
from .manifest import SampleRecord
from .prompting import ContextKind, RenderedPrompt

logger = logging.getLogger(__name__)

API_KEY_ENV = "VERDICT_SHIFT_API_KEY"
DEFAULT_FLOOR = 1e-10
MOCK_SEED = 20240617

TokenLogprobs = Sequence[tuple[str, float]]


@dataclass(frozen=True)
class VerdictProbs:
    p_yes: float
    p_no: float
    context_kind: ContextKind
    raw_token_evidence: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        for name in ("p_yes", "p_no"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name}={p} outside [0, 1]")


@dataclass(frozen=True)
class EvaluatorConfig:
    endpoint: str
    model_name: str
    top_logprobs_requested: int = 20
    request_timeout: float = 60.0
    max_retries: int = 3
    probability_floor: float = DEFAULT_FLOOR
    max_in_flight: int = 8
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        parsed = urlparse(self.endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ConfigError(f"endpoint must be an http(s) URL, got {self.endpoint!r}")
        if not self.model_name:
            raise ConfigError("model_name must be non-empty")
        if self.top_logprobs_requested < 2:
            raise ConfigError("top_logprobs_requested must be >= 2")
        if not self.probability_floor > 0:
            raise ConfigError("probability_floor must be > 0")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if not self.request_timeout > 0:
            raise ConfigError("request_timeout must be > 0")
        if self.max_in_flight < 1:
            raise ConfigError("max_in_flight must be >= 1")
        if self.backoff_base < 0:
            raise ConfigError("backoff_base must be >= 0")


def _label(token: str) -> str:
    return token.strip().casefold()


def extract_yes_no_probs(
    top_tokens: Iterable[tuple[str, float]],
    probability_floor: float = DEFAULT_FLOOR,
) -> tuple[float, float]:
    """Sum probability mass of every surface form of "yes" and "no".

    Tokens match after whitespace trimming and case folding, so "Yes",
    " yes" and "YES" all count toward the same label. Results are clamped to
    ``[probability_floor, 1]``.
    """
    p_yes = 0.0
    p_no = 0.0
    for token, logprob in top_tokens:
        label = _label(token)
        if label == "yes":
            p_yes += math.exp(logprob)
        elif label == "no":
            p_no += math.exp(logprob)
    return (
        min(1.0, max(probability_floor, p_yes)),
        min(1.0, max(probability_floor, p_no)),
    )


def parse_top_logprobs(payload: Any) -> list[tuple[str, float]]:
    """Pull the first generated token's top-k list out of a completion response.

    Accepts the chat format (``logprobs.content[0].top_logprobs`` as a list of
    ``{"token", "logprob"}``) and the legacy completions format
    (``logprobs.top_logprobs[0]`` as a ``{token: logprob}`` mapping).
    """
    try:
        choice = payload["choices"][0]
        logprobs = choice["logprobs"]
        if logprobs is None:
            raise KeyError("logprobs")
        if "content" in logprobs and logprobs["content"] is not None:
            entries = logprobs["content"][0]["top_logprobs"]
            tokens = [(str(e["token"]), float(e["logprob"])) for e in entries]
        else:
            first = logprobs["top_logprobs"][0]
            tokens = [(str(t), float(lp)) for t, lp in first.items()]
    except (KeyError, IndexError, TypeError, ValueError, AttributeError) as exc:
        raise ProtocolError(f"response has no first-token top_logprobs ({exc!r})") from None
    if not tokens:
        raise ProtocolError("response has an empty top_logprobs list")
    for tok, lp in tokens:
        if math.isnan(lp) or lp > 1e-9:
            raise ProtocolError(f"invalid logprob {lp!r} for token {tok!r}")
    return tokens


def image_to_url(image: bytes | str | os.PathLike[str]) -> str:
    """Turn an image reference into something a chat request can carry.

    Bytes and local paths are inlined as a base64 data URI; ``http(s)://``
    and ``data:`` references are passed through.
    """
    if isinstance(image, bytes):
        return "data:image/png;base64," + base64.b64encode(image).decode("ascii")
    ref = os.fspath(image)
    if ref.startswith(("data:", "http://", "https://")):
        return ref
    path = Path(ref)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read image {ref}: {exc}") from exc
    mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
    return f"data:{mime};base64," + base64.b64encode(payload).decode("ascii")


def build_request(prompt: RenderedPrompt, image_url: str | None, config: EvaluatorConfig) -> dict:
    content: list[dict[str, Any]] = []
    if prompt.attach_image:
        content.append({"type": "image_url", "image_url": {"url": image_url}})
    content.append({"type": "text", "text": prompt.text})
    return {
        "model": config.model_name,
        "messages": [{"role": "user", "content": content}],
        "max_tokens": 1,
        "logprobs": True,
        "top_logprobs": config.top_logprobs_requested,
        "temperature": 0,
    }


def _auth_headers() -> dict[str, str]:
    token = os.environ.get(API_KEY_ENV)
    return {"Authorization": f"Bearer {token}"} if token else {}


def _is_transient(status: int) -> bool:
    return status == 429 or status >= 500


def query_verdict(
    prompt: RenderedPrompt,
    sample_image: bytes | str | os.PathLike[str] | None,
    config: EvaluatorConfig,
    *,
    client: httpx.Client | None = None,
    sample_id: str | None = None,
    request_id: str | None = None,
) -> VerdictProbs:
    """POST one single-token completion request and read off P(Yes), P(No).

    Transient failures (connection errors, timeouts, HTTP 429/5xx) are retried
    ``config.max_retries`` times with exponential backoff.
    """
    kind = prompt.context_kind.value
    if prompt.attach_image and sample_image is None:
        raise DataError(f"prompt needs an image but none was given (sample {sample_id})")
    image_url = image_to_url(sample_image) if prompt.attach_image else None
    body = build_request(prompt, image_url, config)
    headers = {"Content-Type": "application/json", **_auth_headers()}
    if request_id is not None:
        headers["X-Request-ID"] = request_id

    own_client = client is None
    if own_client:
        client = httpx.Client(timeout=config.request_timeout)
    try:
        last_error = "no attempt made"
        for attempt in range(config.max_retries + 1):
            if attempt:
                time.sleep(config.backoff_base * 2 ** (attempt - 1))
            try:
                resp = client.post(config.endpoint, json=body, headers=headers)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                logger.debug("attempt %d failed for %s/%s: %s", attempt + 1, sample_id, kind, last_error)
                continue
            if _is_transient(resp.status_code):
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"HTTP {resp.status_code}: {resp.text[:200]}", sample_id, kind
                )
            try:
                payload = resp.json()
            except (json.JSONDecodeError, UnicodeDecodeError):
                raise ProtocolError("response body is not JSON", sample_id, kind) from None
            try:
                tokens = parse_top_logprobs(payload)
            except ProtocolError as exc:
                raise ProtocolError(str(exc), sample_id, kind) from None
            p_yes, p_no = extract_yes_no_probs(tokens, config.probability_floor)
            return VerdictProbs(p_yes, p_no, prompt.context_kind, tuple(tokens))
        raise TransportError(
            f"gave up after {config.max_retries + 1} attempt(s): {last_error}", sample_id, kind
        )
    finally:
        if own_client:
            client.close()


class Evaluator(Protocol):
    def query(self, prompt: RenderedPrompt, sample: SampleRecord) -> VerdictProbs: ...


class HttpEvaluator:
    """Thread-safe remote evaluator with a cap on in-flight requests."""

    def __init__(self, config: EvaluatorConfig, client: httpx.Client | None = None) -> None:
        self.config = config
        self._client = client or httpx.Client(
            timeout=config.request_timeout,
            limits=httpx.Limits(max_connections=config.max_in_flight),
        )
        self._slots = threading.BoundedSemaphore(config.max_in_flight)

    def query(self, prompt: RenderedPrompt, sample: SampleRecord) -> VerdictProbs:
        with self._slots:
            return query_verdict(
                prompt,
                sample.image_path if prompt.attach_image else None,
                self.config,
                client=self._client,
                sample_id=sample.id,
                request_id=f"{sample.id}:{prompt.context_kind.value}",
            )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> HttpEvaluator:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


MockTable = Mapping[tuple[str, ContextKind], tuple[float, float]]


def _hash_uniforms(sample_id: str, kind: ContextKind, seed: int) -> tuple[float, float]:
    digest = hashlib.sha256(f"{seed}\x1f{sample_id}\x1f{kind.value}".encode("utf-8")).digest()
    a = int.from_bytes(digest[:8], "big") / 2**64
    b = int.from_bytes(digest[8:16], "big") / 2**64
    return a, b


def mock_verdict(
    sample_id: str,
    context_kind: ContextKind,
    table: MockTable,
    *,
    seed: int = MOCK_SEED,
    probability_floor: float = DEFAULT_FLOOR,
) -> VerdictProbs:
    """Table lookup; untabled keys get stable hash-derived probabilities."""
    kind = ContextKind(context_kind)
    key = (sample_id, kind)
    if key in table:
        p_yes, p_no = table[key]
    else:
        a, b = _hash_uniforms(sample_id, kind, seed)
        p_yes, p_no = a, (1.0 - a) * b
    p_yes = min(1.0, max(probability_floor, float(p_yes)))
    p_no = min(1.0, max(probability_floor, float(p_no)))
    return VerdictProbs(p_yes, p_no, kind)


@dataclass
class MockEvaluator:
    """In-process evaluator backed by :func:`mock_verdict`.

    ``fail_ids`` forces a :class:`TransportError` for those samples, and
    ``fail_after`` raises on every call past the given count, which lets tests
    simulate a crash part-way through a run.
    """

    table: MockTable = field(default_factory=dict)
    seed: int = MOCK_SEED
    probability_floor: float = DEFAULT_FLOOR
    fail_ids: frozenset[str] = frozenset()
    fail_after: int | None = None
    calls: list[tuple[str, ContextKind, bool]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()
        self._counter = itertools.count()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def query(self, prompt: RenderedPrompt, sample: SampleRecord) -> VerdictProbs:
        with self._lock:
            n = next(self._counter)
            self.calls.append((sample.id, prompt.context_kind, prompt.attach_image))
        if self.fail_after is not None and n >= self.fail_after:
            raise TransportError("mock evaluator stopped", sample.id, prompt.context_kind.value)
        if sample.id in self.fail_ids:
            raise TransportError("forced mock failure", sample.id, prompt.context_kind.value)
        return mock_verdict(
            sample.id,
            prompt.context_kind,
            self.table,
            seed=self.seed,
            probability_floor=self.probability_floor,
        )


def load_mock_table(path: str | os.PathLike[str]) -> dict[tuple[str, ContextKind], tuple[float, float]]:
    """Read ``{"id", "context", "p_yes", "p_no"}`` JSONL rows into a mock table."""
    table: dict[tuple[str, ContextKind], tuple[float, float]] = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read mock table {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
                kind = ContextKind(row["context"])
                p_yes, p_no = float(row["p_yes"]), float(row["p_no"])
                sid = str(row["id"])
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"mock table line {lineno}: {exc}") from None
            if not (0.0 <= p_yes <= 1.0 and 0.0 <= p_no <= 1.0):
                raise ConfigError(f"mock table line {lineno}: probabilities must lie in [0, 1]")
            table[(sid, kind)] = (p_yes, p_no)
    return table
