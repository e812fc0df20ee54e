"""Joint effectiveness/efficiency scoring of thoughts, with the Hoeffding-style error bound."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .rollout import RolloutProfile

LN2 = math.log(2.0)
DEFAULT_DELTA = 0.25
DEFAULT_CONFIDENCE = 0.95


class MetricError(ValueError):
    pass


class ZeroLengthError(MetricError):
    pass


class IncompleteProfileError(MetricError):
    pass


@dataclass(frozen=True)
class LengthFactors:
    t1: float
    t2: float
    d_y: int
    d_yi: int
    d_cum: int


@dataclass(frozen=True)
class ErrorBoundReport:
    epsilon: float
    confidence: float
    bound: float
    n_sum: int


@dataclass(frozen=True)
class MetricScore:
    value: float
    p_hat: float
    penalty_applied: bool
    delta: float
    factors: LengthFactors
    error_bound: ErrorBoundReport | None = None


@dataclass
class ScoredTrace:
    trace_id: str | None
    scores: list[MetricScore]  # one per thought, index 1..n in order

    @property
    def values(self) -> list[float]:
        return [s.value for s in self.scores]


def length_factors(trace, i: int) -> LengthFactors:
    """Context factor t1 and self-length factor t2 for thought i (1-based), in tokens."""
    lengths = trace.token_lengths()
    if not 1 <= i <= len(lengths):
        raise IndexError(f"thought index {i} outside 1..{len(lengths)}")
    d_y = sum(lengths)
    if d_y == 0:
        raise ZeroLengthError("trace has zero total token length")
    d_yi = lengths[i - 1]
    d_cum = sum(lengths[:i])
    return LengthFactors(
        t1=(d_y - d_cum) / d_y, t2=(d_y - d_yi) / d_y, d_y=d_y, d_yi=d_yi, d_cum=d_cum
    )


def decay_penalty(p_hat_i: float, p_hat_prev: float | None) -> bool:
    """The penalty fires when the prefix accuracy fails to strictly improve on its predecessor."""
    if p_hat_prev is None:
        return False
    return p_hat_i <= p_hat_prev


def joint_metric(
    factors: LengthFactors,
    p_hat: float,
    penalty_applied: bool,
    delta: float = DEFAULT_DELTA,
    error_bound_report: ErrorBoundReport | None = None,
) -> MetricScore:
    value = math.log2(1.0 + factors.t1 * factors.t2 * p_hat)
    if penalty_applied:
        value -= delta
    return MetricScore(value, p_hat, penalty_applied, delta, factors, error_bound_report)


def error_bound(n_sum: int, confidence: float = DEFAULT_CONFIDENCE) -> ErrorBoundReport:
    """Two-sided Hoeffding epsilon at the given confidence, and its log-domain bound epsilon/ln 2."""
    if n_sum < 1:
        raise MetricError("n_sum must be >= 1")
    if not 0.0 < confidence < 1.0:
        raise MetricError("confidence must be in (0, 1)")
    epsilon = math.sqrt(math.log(2.0 / (1.0 - confidence)) / (2.0 * n_sum))
    return ErrorBoundReport(epsilon=epsilon, confidence=confidence, bound=epsilon / LN2, n_sum=n_sum)


def _p_hat_at_budget(stats, budget: int | None) -> tuple[float, int]:
    if budget is None or budget >= stats.n_sum:
        return stats.p_hat, stats.n_sum
    if budget < 1:
        raise MetricError("budget must be >= 1")
    flags = stats.correct_flags[:budget]
    return sum(flags) / budget, budget


def score_trace(
    profile: RolloutProfile,
    delta: float = DEFAULT_DELTA,
    confidence: float = DEFAULT_CONFIDENCE,
    budget: int | None = None,
) -> ScoredTrace:
    """Score every thought of a rolled-out trace.

    The penalty comparison for thought i uses the i-1 prefix accuracy, with the
    i = 0 no-thought baseline feeding i = 1. A budget restricts every estimate
    to the first `budget` recorded samples, which is how the convergence curves
    at increasing rollout counts are produced from a single profile.
    """
    trace = profile.trace
    missing = [i for i in range(trace.n + 1) if i not in profile.stats]
    if missing:
        raise IncompleteProfileError(f"profile missing indices {missing}")
    partial = [i for i, s in profile.stats.items() if s.partial]
    if partial:
        raise IncompleteProfileError(f"profile has partial indices {sorted(partial)}")

    scores: list[MetricScore] = []
    prev_p, _ = _p_hat_at_budget(profile.stats[0], budget)
    for i in range(1, trace.n + 1):
        p_hat, n_used = _p_hat_at_budget(profile.stats[i], budget)
        factors = length_factors(trace, i)
        penalty = decay_penalty(p_hat, prev_p)
        scores.append(
            joint_metric(factors, p_hat, penalty, delta, error_bound(n_used, confidence))
        )
        prev_p = p_hat
    return ScoredTrace(trace_id=trace.trace_id, scores=scores)


def score_to_record(trace_id: str | None, i: int, score: MetricScore) -> dict:
    report = score.error_bound
    return {
        "id": trace_id,
        "i": i,
        "value": score.value,
        "t1": score.factors.t1,
        "t2": score.factors.t2,
        "p_hat": score.p_hat,
        "penalty": score.penalty_applied,
        "epsilon": report.epsilon if report else None,
        "bound": report.bound if report else None,
    }
