"""Completion providers.

Everything that can answer a prompt satisfies one contract:
``complete(ProviderRequest) -> ProviderResponse`` with exact token usage.
Two implementations ship here: a deterministic offline mock (used by tests,
golden bundles and the demo) and a remote client speaking the common
chat-completions HTTP shape.

Request tags follow ``{video_id}/{slot}/{level}`` where the final segment is
``1``, ``2`` or ``punctuation``; the mock keys its behavior off that segment.
"""

from __future__ import annotations

import hashlib
import math
import os
import random
import re
import threading
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Protocol

import httpx

__all__ = [
    "TokenUsage",
    "ProviderRequest",
    "ProviderResponse",
    "ProviderFailure",
    "Timeout",
    "RateLimited",
    "BackendError",
    "UsageMissing",
    "Exhausted",
    "CompletionProvider",
    "MockProvider",
    "RemoteProvider",
    "RetryPolicy",
    "RetryResult",
    "complete_with_retry",
]


class ProviderFailure(Exception):
    """Base class for completion-provider failures."""


class Timeout(ProviderFailure):
    """The backend did not answer within the configured timeout."""


class RateLimited(ProviderFailure):
    """HTTP 429; carries the server's retry-after hint when present."""

    def __init__(self, message: str, retry_after_s: float | None = None):
        super().__init__(message)
        self.retry_after_s = retry_after_s


class BackendError(ProviderFailure):
    """Non-429 HTTP error from the backend."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"backend returned {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class UsageMissing(ProviderFailure):
    """The remote reply lacked token usage accounting."""


class Exhausted(ProviderFailure):
    """All retry attempts failed; wraps the last error."""

    def __init__(self, attempts: int, last_error: ProviderFailure):
        super().__init__(f"gave up after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


@dataclass(frozen=True)
class TokenUsage:
    """Prompt/completion token counts as reported by a provider."""

    prompt_tokens: int
    completion_tokens: int

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


@dataclass(frozen=True)
class ProviderRequest:
    prompt: str
    max_output_tokens: int = 512
    temperature: float = 0.0
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ProviderResponse:
    text: str
    usage: TokenUsage
    latency_ms: int


class CompletionProvider(Protocol):
    model_name: str

    def complete(self, request: ProviderRequest) -> ProviderResponse: ...


_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def _payload_of(prompt: str) -> str:
    """Text after the first ': ', which is where the shipped templates put
    the transcript payload; the whole prompt when no marker exists."""
    _, sep, rest = prompt.partition(": ")
    return rest if sep else prompt


def _last_sentence(text: str) -> str:
    parts = [p for p in _SENTENCE_SPLIT_RE.split(text.strip()) if p]
    return parts[-1] if parts else text.strip()


def mock_punctuate(text: str) -> str:
    """The mock's fixed punctuation transform.

    Word-preserving: appends a full stop to every tenth word (and the last),
    and uppercases the word that follows each inserted stop. Words already
    carrying terminal punctuation are left alone.
    """
    words = text.split()
    out: list[str] = []
    capitalize_next = True
    for i, word in enumerate(words):
        if capitalize_next and word[:1].isalpha():
            word = word[0].upper() + word[1:]
        capitalize_next = False
        is_tenth = (i + 1) % 10 == 0
        is_last = i == len(words) - 1
        if word.endswith((".", "!", "?")):
            capitalize_next = True
        elif is_tenth or is_last:
            word += "."
            capitalize_next = True
        out.append(word)
    return " ".join(out)


class MockProvider:
    """Deterministic, offline provider.

    Explanation requests (tag ending in ``/1`` or ``/2``) yield
    ``MOCK-EXPLAIN[<level>|sha=<8 hex of the prompt's SHA-256>]: <last
    sentence of the payload>``. Punctuation requests (tag ending in
    ``/punctuation``) yield :func:`mock_punctuate` of the payload. Token
    usage is ``ceil(len(prompt)/4)`` prompt tokens and 48 completion tokens.
    """

    model_name = "mock"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        tail = request.request_tag.rsplit("/", 1)[-1]
        payload = _payload_of(request.prompt)
        if tail == "punctuation":
            text = mock_punctuate(payload)
        else:
            level = tail if tail in ("1", "2") else "1"
            digest = hashlib.sha256(request.prompt.encode("utf-8")).hexdigest()[:8]
            text = f"MOCK-EXPLAIN[{level}|sha={digest}]: {_last_sentence(payload)}"
        usage = TokenUsage(
            prompt_tokens=math.ceil(len(request.prompt) / 4),
            completion_tokens=48,
        )
        return ProviderResponse(text=text, usage=usage, latency_ms=0)


class RemoteProvider:
    """Client for a chat-completions HTTP endpoint.

    POSTs ``{base_url}/chat/completions`` with a single user message and
    reads ``choices[0].message.content`` plus the ``usage`` object. The
    bearer token, base URL and model come from ``HUH_API_KEY``,
    ``HUH_API_BASE_URL`` and ``HUH_MODEL`` when built via :meth:`from_env`.
    Safe for concurrent use; at most ``max_in_flight`` requests run at once.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str = "",
        *,
        timeout_s: float = 60.0,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        self.model_name = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(
            base_url=base_url.rstrip("/"),
            headers=headers,
            timeout=timeout_s,
            transport=transport,
        )
        self._in_flight = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_env(cls, env: Mapping[str, str] = os.environ, **kwargs) -> "RemoteProvider":
        base_url = env.get("HUH_API_BASE_URL")
        model = env.get("HUH_MODEL")
        if not base_url or not model:
            raise ValueError("HUH_API_BASE_URL and HUH_MODEL must be set")
        return cls(base_url, model, env.get("HUH_API_KEY", ""), **kwargs)

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        payload = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        started = time.perf_counter()
        with self._in_flight:
            try:
                response = self._client.post("/chat/completions", json=payload)
            except httpx.TimeoutException as err:
                raise Timeout(f"request timed out: {err}") from err
        latency_ms = round((time.perf_counter() - started) * 1000)
        if response.status_code == 429:
            retry_after = response.headers.get("Retry-After")
            raise RateLimited(
                "rate limited by backend",
                retry_after_s=float(retry_after) if retry_after else None,
            )
        if response.status_code >= 400:
            raise BackendError(response.status_code, response.text[:200])
        body = response.json()
        try:
            text = body["choices"][0]["message"]["content"]
            usage = TokenUsage(
                prompt_tokens=int(body["usage"]["prompt_tokens"]),
                completion_tokens=int(body["usage"]["completion_tokens"]),
            )
        except (KeyError, IndexError, TypeError, ValueError) as err:
            raise UsageMissing(f"reply lacked text or usage accounting: {err}") from err
        return ProviderResponse(text=text, usage=usage, latency_ms=latency_ms)

    def close(self) -> None:
        self._client.close()


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 4
    backoff_base_ms: int = 500
    max_backoff_ms: int = 8000
    jitter: float = 0.25


@dataclass(frozen=True)
class RetryResult:
    response: ProviderResponse
    attempts: int


def complete_with_retry(
    provider: CompletionProvider,
    request: ProviderRequest,
    policy: RetryPolicy = RetryPolicy(),
    *,
    sleep: Callable[[float], None] = time.sleep,
    rng: Callable[[], float] = random.random,
) -> RetryResult:
    """Call ``provider.complete`` with exponential backoff.

    Only :class:`Timeout` and :class:`RateLimited` are retried; everything
    else is terminal and propagates. Raises :class:`Exhausted` once
    ``policy.max_attempts`` transient failures pile up.
    """
    last_error: ProviderFailure | None = None
    for attempt in range(1, policy.max_attempts + 1):
        try:
            return RetryResult(provider.complete(request), attempts=attempt)
        except (Timeout, RateLimited) as err:
            last_error = err
            if attempt == policy.max_attempts:
                break
            delay_ms = min(
                policy.backoff_base_ms * 2 ** (attempt - 1), policy.max_backoff_ms
            )
            if isinstance(err, RateLimited) and err.retry_after_s is not None:
                delay_ms = max(delay_ms, err.retry_after_s * 1000)
            delay_ms *= 1.0 + policy.jitter * rng()
            sleep(delay_ms / 1000.0)
    assert last_error is not None
    raise Exhausted(policy.max_attempts, last_error) from last_error
