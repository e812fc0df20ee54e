"""Core request/response types shared by every text-generation backend."""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field

FINISH_STOP = "stop_sequence"
FINISH_LENGTH = "length_limit"
FINISH_END = "end_of_stream"

BACKEND_KINDS = ("scripted", "bernoulli", "remote")


class BackendError(RuntimeError):
    """Base class for backend failures."""


class TransportFailure(BackendError):
    """Retryable wire-level failure (connection, timeout, 5xx)."""


class MalformedResponseError(BackendError):
    """Remote payload did not carry a usable completion; never retried."""


class ScriptExhaustedError(BackendError):
    """Scripted backend has no entry matching the request."""


class DuplicateMatcherError(ValueError):
    """Two scripted entries share the same matcher."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt_messages: tuple[tuple[str, str], ...]
    max_new_tokens: int
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.prompt_messages:
            raise ValueError("prompt_messages must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def prompt_text(self) -> str:
        return "\n".join(text for _, text in self.prompt_messages)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    completion_tokens: int
    finish_reason: str

    def __post_init__(self) -> None:
        if self.completion_tokens < 0:
            raise ValueError("completion_tokens must be >= 0")
        if self.finish_reason not in (FINISH_STOP, FINISH_LENGTH, FINISH_END):
            raise ValueError(f"unknown finish_reason: {self.finish_reason!r}")


@dataclass
class BackendDescriptor:
    kind: str
    identity: str
    concurrency_limit: int
    engine: object = field(repr=False, compare=False, default=None)
    _semaphore: threading.Semaphore = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"unknown backend kind: {self.kind!r}")
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        self._semaphore = threading.Semaphore(self.concurrency_limit)

    @property
    def calls(self) -> int:
        return getattr(self.engine, "calls", 0)


def canonical_request_key(identity: str, request: CompletionRequest) -> str:
    """Stable content hash of (identity, request); the cache key for remote completions."""
    payload = {
        "identity": identity,
        "messages": [list(m) for m in request.prompt_messages],
        "temperature": request.temperature,
        "max_new_tokens": request.max_new_tokens,
        "stop_sequences": list(request.stop_sequences),
        "seed": request.seed,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def derive_seed(*parts: object) -> int:
    """Platform-stable integer seed mixed from arbitrary parts."""
    blob = "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(blob.encode("utf-8")).digest()[:8], "big")


def truncate_at_stop(text: str, stop_sequences: tuple[str, ...]) -> tuple[str, bool]:
    """Cut text after the earliest stop sequence, keeping the stop itself.

    Mock backends keep the matched stop in the output so tag-grammar turns stay
    parseable; remote APIs usually strip it, which callers handle separately.
    """
    best = None
    for stop in stop_sequences:
        pos = text.find(stop)
        if pos >= 0 and (best is None or pos + len(stop) < best):
            best = pos + len(stop)
    if best is None:
        return text, False
    return text[:best], True
