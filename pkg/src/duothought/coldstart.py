"""Running-max selection over scored thoughts, short-thought completion, and SFT record assembly."""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass
from pathlib import Path

from .backends import BackendDescriptor, CompletionRequest, complete
from .chunking import STEP_DELIMITER, ChunkedTrace
from .dialogue import (
    KIND_ANSWER_FINAL,
    KIND_ANSWER_RETHINK,
    KIND_THINK,
    ROLE_LONG,
    ROLE_SHORT,
    TagSet,
    Turn,
    render_history,
)
from .metric import ScoredTrace
from .prompts import completion_prompt, compose_prompt, role_template

LABEL_LONG = "long"
LABEL_SHORT = "short"

_FENCE_RE = re.compile(r"^\s*```[a-zA-Z]*\s*|\s*```\s*$")


class SynthesisError(ValueError):
    pass


class CompletionParseError(SynthesisError):
    pass


class MissingThoughtError(SynthesisError):
    pass


@dataclass
class SelectionMask:
    labels: list[str]  # per thought 1..n

    @property
    def long_count(self) -> int:
        return sum(1 for label in self.labels if label == LABEL_LONG)


@dataclass(frozen=True)
class LongThought:
    text: str
    covered_indices: tuple[int, ...]


@dataclass(frozen=True)
class ShortThought:
    text: str
    covered_indices: tuple[int, ...]


@dataclass
class MixedTrace:
    question: str
    segments: list[object]
    question_id: str | None = None

    @property
    def m(self) -> int:
        return sum(1 for s in self.segments if isinstance(s, LongThought))

    @property
    def k(self) -> int:
        return sum(1 for s in self.segments if isinstance(s, ShortThought))


@dataclass(frozen=True)
class SftRecord:
    role: str
    input: str
    output: str
    question_id: str | None


def select_long_thoughts(scored: ScoredTrace) -> SelectionMask:
    """First thought is always long; later thoughts are long iff they beat the running max."""
    values = scored.values
    if not values:
        raise SynthesisError("scored trace has no thoughts")
    labels = [LABEL_LONG]
    running_max = values[0]
    for value in values[1:]:
        if value > running_max:
            labels.append(LABEL_LONG)
            running_max = value
        else:
            labels.append(LABEL_SHORT)
    return SelectionMask(labels=labels)


def _partial_solution(trace: ChunkedTrace, mask: SelectionMask) -> str:
    chunks = {}
    for idx, (block, label) in enumerate(zip(trace.blocks, mask.labels), start=1):
        chunks[f"chunk {idx}"] = block.text if label == LABEL_LONG else block.block_type
    return json.dumps(chunks, ensure_ascii=False, indent=0)


def parse_completions(response_text: str) -> list[tuple[str, str]]:
    """Parse a {"Completed Steps": [{"thought", "content"}]} response into (label, text) pairs."""
    body = _FENCE_RE.sub("", response_text).strip()
    data = None
    for loader in (json.loads, ast.literal_eval):
        try:
            data = loader(body)
            break
        except (ValueError, SyntaxError):
            continue
    if not isinstance(data, dict) or "Completed Steps" not in data:
        raise CompletionParseError('response lacks a "Completed Steps" object')
    entries = data["Completed Steps"]
    if not isinstance(entries, list):
        raise CompletionParseError('"Completed Steps" is not a list')
    pairs = []
    for entry in entries:
        if not isinstance(entry, dict) or "thought" not in entry or "content" not in entry:
            raise CompletionParseError(f"malformed completion entry: {entry!r}")
        pairs.append((str(entry["thought"]), str(entry["content"])))
    return pairs


def _assign_completions(
    requested: list[tuple[int, str]], returned: list[tuple[str, str]]
) -> dict[int, str]:
    """Match returned completions to requested chunks by normalized label, in order.

    When labels do not line up but the counts do, fall back to positional
    assignment; otherwise the response is missing a requested thought.
    """
    remaining = [(label.strip().casefold(), text) for label, text in returned]
    assigned: dict[int, str] = {}
    unmatched: list[int] = []
    for index, label in requested:
        key = label.strip().casefold()
        hit = next((j for j, (got, _) in enumerate(remaining) if got == key), None)
        if hit is None:
            unmatched.append(index)
        else:
            assigned[index] = remaining.pop(hit)[1]
    if unmatched:
        if len(unmatched) == len(remaining):
            for index, (_, text) in zip(unmatched, remaining):
                assigned[index] = text
        else:
            labels = [label for i, label in requested if i in unmatched]
            raise MissingThoughtError(f"completion response missing thoughts {labels!r}")
    return assigned


def complete_short_thoughts(
    trace: ChunkedTrace,
    mask: SelectionMask,
    backend: BackendDescriptor,
    max_new_tokens: int = 2048,
    temperature: float = 0.0,
) -> MixedTrace:
    """Re-complete every short-labeled thought and assemble the alternating mixed trace.

    Each short chunk is requested individually (by its block-type label) in one
    backend call; adjacent short completions are merged into a single short
    segment at assembly time, which is what makes m + k <= n.
    """
    if len(mask.labels) != trace.n:
        raise SynthesisError("selection mask does not align with trace")

    shorts = [
        (idx, block.block_type)
        for idx, (block, label) in enumerate(zip(trace.blocks, mask.labels), start=1)
        if label == LABEL_SHORT
    ]
    completions: dict[int, str] = {}
    if shorts:
        prompt = completion_prompt(
            trace.question,
            _partial_solution(trace, mask),
            json.dumps([label for _, label in shorts], ensure_ascii=False),
        )
        request = CompletionRequest(
            prompt_messages=(("user", prompt),),
            max_new_tokens=max_new_tokens,
            temperature=temperature,
        )
        result = complete(backend, request)
        completions = _assign_completions(shorts, parse_completions(result.text))

    # Adjacent same-kind thoughts collapse into one segment so the result
    # always alternates: shorts join with a space, longs with the step
    # delimiter (preserving the original CoT text shape).
    segments: list[object] = []
    for idx, (block, label) in enumerate(zip(trace.blocks, mask.labels), start=1):
        if label == LABEL_LONG:
            if segments and isinstance(segments[-1], LongThought):
                prev = segments[-1]
                segments[-1] = LongThought(
                    text=f"{prev.text}{STEP_DELIMITER}{block.text}",
                    covered_indices=prev.covered_indices + (idx,),
                )
            else:
                segments.append(LongThought(text=block.text, covered_indices=(idx,)))
        elif segments and isinstance(segments[-1], ShortThought):
            prev = segments[-1]
            segments[-1] = ShortThought(
                text=f"{prev.text} {completions[idx]}",
                covered_indices=prev.covered_indices + (idx,),
            )
        else:
            segments.append(ShortThought(text=completions[idx], covered_indices=(idx,)))
    return MixedTrace(question=trace.question, segments=segments, question_id=trace.trace_id)


def _segment_turn(segment: object, is_final: bool) -> Turn:
    if isinstance(segment, LongThought):
        return Turn(ROLE_LONG, KIND_THINK, segment.text)
    kind = KIND_ANSWER_FINAL if is_final else KIND_ANSWER_RETHINK
    return Turn(ROLE_SHORT, kind, segment.text)


def build_sft_records(
    mixed: MixedTrace,
    templates: tuple[str, str] | None = None,
    tags: TagSet = TagSet(),
) -> tuple[list[SftRecord], list[SftRecord]]:
    """Emit one instruction record per segment: input = template + question + tagged history."""
    long_template, short_template = templates or (
        role_template(ROLE_LONG, tags),
        role_template(ROLE_SHORT, tags),
    )
    for prev, cur in zip(mixed.segments, mixed.segments[1:]):
        if isinstance(prev, type(cur)):
            raise SynthesisError("mixed trace segments do not alternate")

    long_records: list[SftRecord] = []
    short_records: list[SftRecord] = []
    history: list[Turn] = []
    last = len(mixed.segments) - 1
    for pos, segment in enumerate(mixed.segments):
        turn = _segment_turn(segment, is_final=pos == last)
        rendered_history = render_history(history, tags)
        if isinstance(segment, LongThought):
            template, bucket = long_template, long_records
            role = ROLE_LONG
        else:
            template, bucket = short_template, short_records
            role = ROLE_SHORT
        bucket.append(
            SftRecord(
                role=role,
                input=compose_prompt(template, mixed.question, rendered_history),
                output=render_history([turn], tags),
                question_id=mixed.question_id,
            )
        )
        history.append(turn)
    return long_records, short_records


def emit_sft_jsonl(records: list[SftRecord], path: Path) -> int:
    """Write one {role, input, output, question_id} object per line; returns the count written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(
                json.dumps(
                    {
                        "role": record.role,
                        "input": record.input,
                        "output": record.output,
                        "question_id": record.question_id,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    return len(records)
