"""Uniform access to text-generation backends: mocks for testing, a wire client for real models."""

from __future__ import annotations

from .base import (
    FINISH_END,
    FINISH_LENGTH,
    FINISH_STOP,
    BackendDescriptor,
    BackendError,
    CompletionRequest,
    CompletionResult,
    DuplicateMatcherError,
    MalformedResponseError,
    ScriptExhaustedError,
    TransportFailure,
    canonical_request_key,
    derive_seed,
)
from .mocks import BernoulliEngine, ScriptedEngine, make_bernoulli_backend, make_scripted_backend
from .remote import CompletionCache, RemoteEngine, make_remote_backend


def complete(backend: BackendDescriptor, request: CompletionRequest) -> CompletionResult:
    """Run one completion against a backend, honoring its in-flight concurrency limit."""
    with backend._semaphore:
        return backend.engine.generate(request)


__all__ = [
    "FINISH_END",
    "FINISH_LENGTH",
    "FINISH_STOP",
    "BackendDescriptor",
    "BackendError",
    "BernoulliEngine",
    "CompletionCache",
    "CompletionRequest",
    "CompletionResult",
    "DuplicateMatcherError",
    "MalformedResponseError",
    "RemoteEngine",
    "ScriptedEngine",
    "ScriptExhaustedError",
    "TransportFailure",
    "canonical_request_key",
    "complete",
    "derive_seed",
    "make_bernoulli_backend",
    "make_remote_backend",
    "make_scripted_backend",
]
