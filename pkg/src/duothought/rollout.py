"""Monte Carlo rollouts of a base backend over growing thought prefixes."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

from .backends import BackendDescriptor, BackendError, CompletionRequest, complete, derive_seed
from .chunking import STEP_DELIMITER, ChunkedTrace
from .prompts import continuation_cue


@dataclass
class RolloutConfig:
    samples_per_thought: int = 5
    max_new_tokens: int = 2048
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.samples_per_thought < 1:
            raise ValueError("samples_per_thought must be >= 1")


@dataclass
class RolloutStats:
    thought_index: int
    n_right: int
    n_sum: int
    response_lengths: list[int]
    correct_flags: list[bool]
    mean_length: float
    partial: bool = False
    error: str | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.n_right <= self.n_sum:
            raise ValueError("need 0 <= n_right <= n_sum")
        if len(self.response_lengths) != self.n_sum:
            raise ValueError("one recorded length per rollout sample")

    @property
    def p_hat(self) -> float:
        return self.n_right / self.n_sum

    @classmethod
    def from_samples(
        cls, thought_index: int, lengths: list[int], flags: list[bool], **kw
    ) -> "RolloutStats":
        mean = sum(lengths) / len(lengths) if lengths else 0.0
        return cls(thought_index, sum(flags), len(flags), lengths, flags, mean, **kw)


@dataclass
class RolloutProfile:
    trace: ChunkedTrace
    gold_answer: str
    stats: dict[int, RolloutStats] = field(default_factory=dict)

    @property
    def complete_indices(self) -> bool:
        n = self.trace.n
        return all(i in self.stats and not self.stats[i].partial for i in range(n + 1))


def build_prefix(trace: ChunkedTrace, i: int) -> str:
    """Question followed by thoughts 1..i and the fixed continuation cue; i = 0 is question-only."""
    if not 0 <= i <= trace.n:
        raise IndexError(f"thought index {i} outside 0..{trace.n}")
    parts = [trace.question]
    if i > 0:
        parts.append(STEP_DELIMITER.join(b.text for b in trace.blocks[:i]))
    parts.append(continuation_cue())
    return STEP_DELIMITER.join(parts)


def prefix_hash(trace: ChunkedTrace, i: int) -> str:
    return hashlib.sha256(build_prefix(trace, i).encode("utf-8")).hexdigest()[:16]


def config_fingerprint(config: RolloutConfig) -> str:
    """Identifies the sampling setup; persisted so stale samples are never resumed."""
    blob = f"{config.seed}|{config.samples_per_thought}|{config.temperature}|{config.max_new_tokens}"
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def rollout_thought(
    trace: ChunkedTrace,
    i: int,
    gold: str,
    config: RolloutConfig,
    backend: BackendDescriptor,
    grader: Callable[[str, str], bool],
) -> RolloutStats:
    """Sample n_sum continuations of the i-thought prefix and grade them against gold.

    Per-sample request seeds are derived from (config.seed, i, sample), so mock
    backends draw independently per sample while staying fully reproducible.
    """
    prompt = build_prefix(trace, i)
    lengths: list[int] = []
    flags: list[bool] = []
    failures = 0
    for k in range(config.samples_per_thought):
        request = CompletionRequest(
            prompt_messages=(("user", prompt),),
            max_new_tokens=config.max_new_tokens,
            temperature=config.temperature,
            seed=derive_seed(config.seed, i, k) % (2**31),
        )
        try:
            result = complete(backend, request)
        except BackendError:
            failures += 1
            continue
        lengths.append(result.completion_tokens)
        flags.append(bool(grader(result.text, gold)))
    error = f"{failures} of {config.samples_per_thought} samples failed" if failures else None
    return RolloutStats.from_samples(i, lengths, flags, partial=failures > 0, error=error)


def rollout_trace(
    trace: ChunkedTrace,
    gold: str,
    config: RolloutConfig,
    backend: BackendDescriptor,
    grader: Callable[[str, str], bool],
    max_workers: int = 1,
    completed: dict[int, RolloutStats] | None = None,
) -> RolloutProfile:
    """Roll out every prefix 0..n; indices already present in `completed` are reused untouched."""
    profile = RolloutProfile(trace=trace, gold_answer=gold, stats=dict(completed or {}))
    todo = [i for i in range(trace.n + 1) if i not in profile.stats]

    def run(i: int) -> RolloutStats:
        return rollout_thought(trace, i, gold, config, backend, grader)

    if max_workers > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for i, stats in zip(todo, pool.map(run, todo)):
                profile.stats[i] = stats
    else:
        for i in todo:
            profile.stats[i] = run(i)
    return profile


def profile_to_records(profile: RolloutProfile) -> list[dict]:
    records = []
    for i in sorted(profile.stats):
        s = profile.stats[i]
        records.append(
            {
                "id": profile.trace.trace_id,
                "i": i,
                "n_right": s.n_right,
                "n_sum": s.n_sum,
                "lengths": s.response_lengths,
                "flags": s.correct_flags,
                "prefix_hash": prefix_hash(profile.trace, i),
                "partial": s.partial,
            }
        )
    return records


def stats_from_record(record: dict) -> RolloutStats:
    return RolloutStats.from_samples(
        record["i"],
        list(record["lengths"]),
        [bool(f) for f in record["flags"]],
        partial=bool(record.get("partial", False)),
    )
