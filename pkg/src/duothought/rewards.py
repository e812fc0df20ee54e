"""Answer extraction, exact-match grading, hybrid reward components, and evaluation metrics."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .dialogue import (
    KIND_ANSWER_FINAL,
    ROLE_LONG,
    ROLE_SHORT,
    TagInBodyError,
    TagSet,
    Transcript,
    render_turn,
    transcript_text,
)

DEFAULT_REFLECTION_PHRASES = (
    "maybe i'm overthinking this",
    "current approach need to be reconsidered",
    "let me double-check",
    "perhaps there's a simpler way",
)

_NUMBER_RE = re.compile(r"(?<![\w.])-?\d+(?:\.\d+)?(?!\w)")
_ANSWER_IS_RE = re.compile(r"answer\s+is", re.IGNORECASE)


@dataclass(frozen=True)
class RewardCoeffs:
    eta_r: float = 1.0
    lambda_r: float = 0.0
    mu_r: float = 0.0

    def __post_init__(self) -> None:
        if self.mu_r < 0:
            raise ValueError("mu_r must be >= 0")


@dataclass(frozen=True)
class MuSchedule:
    warmup_steps: int = 0
    ramp_steps: int = 1
    mu_max: float = 0.0

    def __post_init__(self) -> None:
        if self.ramp_steps < 1:
            raise ValueError("ramp_steps must be >= 1")


@dataclass
class GroupSample:
    total_length: int
    correct: bool
    transcript: Transcript | None = None

    def __post_init__(self) -> None:
        if self.total_length < 0:
            raise ValueError("total_length must be >= 0")


@dataclass(frozen=True)
class AesBaseline:
    acc_base: float
    length_base: float
    weight_eta: float = 1.0
    weight_sigma_pos: float = 3.0
    weight_sigma_neg: float = -5.0

    def __post_init__(self) -> None:
        if self.acc_base <= 0 or self.length_base <= 0:
            raise ValueError("baseline accuracy and length must be positive")


@dataclass(frozen=True)
class EvalSummary:
    pass_at_1: float
    avg_length: float
    aes: float


def _last_boxed(text: str) -> str | None:
    starts = [m.start() for m in re.finditer(r"\\boxed", text)]
    for idx in reversed(starts):
        pos = idx + len("\\boxed")
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos >= len(text) or text[pos] != "{":
            continue
        depth, pos = 1, pos + 1
        content = []
        while pos < len(text):
            ch = text[pos]
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return "".join(content).strip()
            content.append(ch)
            pos += 1
    return None


def extract_answer(text: str) -> str | None:
    """Last boxed expression, else last standalone number, else the tail after "answer is"."""
    if not text:
        return None
    boxed = _last_boxed(text)
    if boxed is not None:
        return boxed
    numbers = _NUMBER_RE.findall(text)
    if numbers:
        return numbers[-1]
    matches = list(_ANSWER_IS_RE.finditer(text))
    if matches:
        tail = text[matches[-1].end():].strip().lstrip(":").strip()
        tail = tail.rstrip(".!?").strip()
        if tail:
            return tail
    return None


def _normalize(answer: str) -> str:
    s = answer.strip()
    while len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    boxed = _last_boxed(s)
    if boxed is not None and s.startswith("\\boxed"):
        s = boxed
    while len(s) >= 2 and s.startswith("$") and s.endswith("$"):
        s = s[1:-1].strip()
    return s


def exact_match(pred: str | None, gold: str) -> int:
    """1 iff pred and gold agree after trimming, unboxing, and numeric equivalence."""
    if pred is None:
        return 0
    a, b = _normalize(pred), _normalize(gold)
    try:
        return int(float(a) == float(b))
    except ValueError:
        return int(a.casefold() == b.casefold())


def grade(text: str, gold: str) -> bool:
    """The extraction + exact-match pipeline used to judge rollout and dialogue outputs."""
    return exact_match(extract_answer(text), gold) == 1


def format_reward(transcript: Transcript, tags: TagSet) -> float:
    """1.0 iff every turn re-renders under the role grammar, alternation holds, and it answered."""
    if transcript.terminal != "answered" or not transcript.turns:
        return 0.0
    if transcript.turns[-1].kind != KIND_ANSWER_FINAL:
        return 0.0
    for idx, turn in enumerate(transcript.turns):
        expected_role = ROLE_LONG if idx % 2 == 0 else ROLE_SHORT
        if turn.role != expected_role:
            return 0.0
        is_last = idx == len(transcript.turns) - 1
        if (turn.kind == KIND_ANSWER_FINAL) != (is_last and turn.role == ROLE_SHORT):
            return 0.0
        try:
            render_turn(turn, tags)
        except (TagInBodyError, ValueError):
            return 0.0
    return 1.0


def length_reward(group: list[GroupSample]) -> list[float]:
    """Group-relative length reward: 0.5 - (len - min)/(max - min), floored at 0 when incorrect."""
    if not group:
        raise ValueError("empty sample group")
    lengths = [s.total_length for s in group]
    lo, hi = min(lengths), max(lengths)
    if hi == lo:
        return [0.0] * len(group)
    rewards = []
    for sample in group:
        lam = 0.5 - (sample.total_length - lo) / (hi - lo)
        rewards.append(lam if sample.correct else min(0.0, lam))
    return rewards


def hybrid_reward(
    sample: GroupSample,
    gold: str,
    group: list[GroupSample],
    coeffs: RewardCoeffs,
    tags: TagSet,
) -> float:
    """eta_r * EM + lambda_r * FM + mu_r * LM for one sample within its group."""
    try:
        index = next(i for i, s in enumerate(group) if s is sample)
    except StopIteration:
        raise ValueError("sample is not a member of the group") from None
    if sample.transcript is None:
        raise ValueError("hybrid reward needs the sample's transcript")
    em = exact_match(extract_answer(transcript_text(sample.transcript, tags)), gold)
    fm = format_reward(sample.transcript, tags)
    lm = length_reward(group)[index]
    return coeffs.eta_r * em + coeffs.lambda_r * fm + coeffs.mu_r * lm


def mu_schedule(step: int, schedule: MuSchedule) -> float:
    """Zero through warmup, then a linear ramp to mu_max."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step < schedule.warmup_steps:
        return 0.0
    ramp = (step - schedule.warmup_steps) / schedule.ramp_steps
    return schedule.mu_max * min(1.0, ramp)


def pass_at_1(results: list[bool]) -> float:
    if not results:
        raise ValueError("no results")
    return sum(1 for r in results if r) / len(results)


def aes(acc_model: float, length_model: float, baseline: AesBaseline) -> float:
    """Composite of relative length savings and (asymmetrically weighted) relative accuracy change."""
    rel_len = (baseline.length_base - length_model) / baseline.length_base
    rel_acc = (acc_model - baseline.acc_base) / baseline.acc_base
    sigma = baseline.weight_sigma_pos if rel_acc >= 0 else baseline.weight_sigma_neg
    return baseline.weight_eta * rel_len + sigma * abs(rel_acc)


def reflection_marker_count(
    transcript: Transcript, phrases: tuple[str, ...] = DEFAULT_REFLECTION_PHRASES
) -> int:
    """Number of turns whose body contains any reflection phrase, case-insensitive."""
    if not phrases:
        raise ValueError("no phrases given")
    needles = [p.casefold() for p in phrases]
    count = 0
    for turn in transcript.turns:
        body = turn.body.casefold()
        if any(needle in body for needle in needles):
            count += 1
    return count


def make_group_sample(transcript: Transcript, gold: str, tags: TagSet) -> GroupSample:
    """Grade a transcript and bundle it with its total generated-token length."""
    counts = transcript.token_counts
    total = sum(counts) if counts else sum(len(t.body.split()) for t in transcript.turns)
    correct = grade(transcript_text(transcript, tags), gold)
    return GroupSample(total_length=total, correct=correct, transcript=transcript)
