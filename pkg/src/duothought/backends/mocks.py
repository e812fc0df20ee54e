"""Deterministic mock backends: scripted lookup tables and seeded bernoulli answer generators."""

from __future__ import annotations

import random
import threading

from .base import (
    FINISH_END,
    FINISH_LENGTH,
    FINISH_STOP,
    BackendDescriptor,
    CompletionRequest,
    CompletionResult,
    DuplicateMatcherError,
    ScriptExhaustedError,
    canonical_request_key,
    derive_seed,
    truncate_at_stop,
)
from ..tokens import count_tokens

# Digit-free filler so a mock completion's only extractable answer is the one it intends.
_FILLER = ("we", "note", "that", "the", "value", "follows", "from", "this", "working")


class _CallCounter:
    def __init__(self) -> None:
        self.calls = 0
        self._lock = threading.Lock()

    def _count(self) -> None:
        with self._lock:
            self.calls += 1


class ScriptedEngine(_CallCounter):
    """First-match lookup over (matcher, response) entries.

    A string matcher hits when the prompt equals it or starts with it; a
    callable matcher is a predicate over the prompt text. Entries are checked
    in order, so non-disjoint scripts resolve to the earliest entry.
    """

    def __init__(self, script: list[tuple[object, str]]) -> None:
        super().__init__()
        seen: set[str] = set()
        for matcher, _ in script:
            if isinstance(matcher, str):
                if matcher in seen:
                    raise DuplicateMatcherError(f"duplicate matcher: {matcher!r}")
                seen.add(matcher)
        self.script = list(script)

    def generate(self, request: CompletionRequest) -> CompletionResult:
        self._count()
        prompt = request.prompt_text
        for matcher, response in self.script:
            if isinstance(matcher, str):
                hit = prompt == matcher or prompt.startswith(matcher)
            else:
                hit = bool(matcher(prompt))
            if hit:
                text, stopped = truncate_at_stop(response, request.stop_sequences)
                reason = FINISH_STOP if stopped else FINISH_END
                return CompletionResult(text, count_tokens(text), reason)
        raise ScriptExhaustedError(f"no script entry matches prompt of length {len(prompt)}")


class BernoulliEngine(_CallCounter):
    """Completion is correct with probability p; every draw is a pure function of (seed, request)."""

    def __init__(self, p: float, answer: str, length_range: tuple[int, int], seed: int) -> None:
        super().__init__()
        if not 0.0 <= p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        lo, hi = length_range
        if not 1 <= lo <= hi:
            raise ValueError("length range must satisfy 1 <= min <= max")
        self.p = p
        self.answer = answer
        self.length_range = (lo, hi)
        self.seed = seed

    def generate(self, request: CompletionRequest) -> CompletionResult:
        self._count()
        key = canonical_request_key("bernoulli", request)
        rng = random.Random(derive_seed(self.seed, key))
        correct = rng.random() < self.p
        length = rng.randint(*self.length_range)
        capped = length > request.max_new_tokens
        length = min(length, request.max_new_tokens)
        answer = self.answer if correct else f"not-{self.answer}"
        tail = ["Final", "answer:", f"\\boxed{{{answer}}}"][-min(length, 3):]
        words = [_FILLER[i % len(_FILLER)] for i in range(length - len(tail))] + tail
        text = " ".join(words)
        reason = FINISH_LENGTH if capped else FINISH_END
        return CompletionResult(text, length, reason)


def make_scripted_backend(
    script: list[tuple[object, str]],
    identity: str = "scripted",
    concurrency_limit: int = 8,
) -> BackendDescriptor:
    return BackendDescriptor("scripted", identity, concurrency_limit, ScriptedEngine(script))


def make_bernoulli_backend(
    p: float,
    answer: str,
    length_range: tuple[int, int],
    seed: int,
    identity: str = "bernoulli",
    concurrency_limit: int = 8,
) -> BackendDescriptor:
    engine = BernoulliEngine(p, answer, length_range, seed)
    return BackendDescriptor("bernoulli", identity, concurrency_limit, engine)
