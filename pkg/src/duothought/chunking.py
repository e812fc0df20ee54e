"""Split a long CoT into indexed steps and group them into validated thought blocks."""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field

from .backends import BackendDescriptor, CompletionRequest, complete
from .prompts import chunking_prompt
from .tokens import count_tokens

STEP_DELIMITER = "\n\n"
_SPLIT_RE = re.compile(r"\n\s*\n")
_FENCE_RE = re.compile(r"^\s*```[a-zA-Z]*\s*|\s*```\s*$")


class ChunkingError(ValueError):
    """Base class for chunking failures."""


class EmptyTextError(ChunkingError):
    pass


class ProposalParseError(ChunkingError):
    pass


class EmptyProposalError(ChunkingError):
    pass


class BlockValidationError(ChunkingError):
    """Carries which rule failed and the 1-based index of the offending block."""

    def __init__(self, kind: str, block_index: int, detail: str) -> None:
        super().__init__(f"{kind} at block {block_index}: {detail}")
        self.kind = kind
        self.block_index = block_index


@dataclass
class StepList:
    question: str
    steps: list[str]


@dataclass(frozen=True)
class ThoughtBlock:
    start: int
    end: int
    block_type: str
    text: str


@dataclass
class ChunkedTrace:
    question: str
    blocks: list[ThoughtBlock]
    source: str = "manual"
    trace_id: str | None = None
    _token_lengths: list[int] | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.blocks)

    @property
    def cot_text(self) -> str:
        return STEP_DELIMITER.join(b.text for b in self.blocks)

    def token_lengths(self) -> list[int]:
        """Per-thought whitespace token counts, computed once and cached."""
        if self._token_lengths is None:
            self._token_lengths = [count_tokens(b.text) for b in self.blocks]
        return self._token_lengths


def split_steps(question: str, cot_text: str) -> StepList:
    """Split a CoT into its maximal blank-line-delimited segments, indexed from 0."""
    text = cot_text.strip()
    if not text:
        raise EmptyTextError("cot_text is empty after trimming")
    steps = [s for s in _SPLIT_RE.split(text) if s.strip()]
    return StepList(question=question, steps=steps)


def numbered_cot(steps: StepList) -> str:
    return STEP_DELIMITER.join(f"Step {i}: {text}" for i, text in enumerate(steps.steps))


def _coerce_index(value: object, key: str, block_key: str) -> int:
    if isinstance(value, bool):
        raise ProposalParseError(f"{block_key}: non-integer {key} {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and value.strip().lstrip("-").isdigit():
        return int(value.strip())
    raise ProposalParseError(f"{block_key}: non-integer {key} {value!r}")


def parse_proposal(response_text: str) -> list[tuple[int, int, str]]:
    """Parse a chunking response into ordered (start, end, block_type) triples.

    Accepts strict JSON or single-quoted dict literals, with optional code
    fences. Keys must look like "block <k>"; triples come back sorted by k.
    """
    body = _FENCE_RE.sub("", response_text).strip()
    data = None
    for loader in (json.loads, ast.literal_eval):
        try:
            data = loader(body)
            break
        except (ValueError, SyntaxError):
            continue
    if not isinstance(data, dict):
        raise ProposalParseError("response is not a JSON object of blocks")

    keyed: list[tuple[int, tuple[int, int, str]]] = []
    for key, value in data.items():
        match = re.fullmatch(r"block\s*(\d+)", str(key).strip(), re.IGNORECASE)
        if not match:
            raise ProposalParseError(f"unexpected key {key!r}")
        if not isinstance(value, dict):
            raise ProposalParseError(f"{key}: value is not an object")
        fields = {str(k).strip().lower().replace(" ", "_"): v for k, v in value.items()}
        missing = {"start", "end", "block_type"} - fields.keys()
        if missing:
            raise ProposalParseError(f"{key}: missing fields {sorted(missing)}")
        start = _coerce_index(fields["start"], "start", str(key))
        end = _coerce_index(fields["end"], "end", str(key))
        keyed.append((int(match.group(1)), (start, end, str(fields["block_type"]))))
    if not keyed:
        raise EmptyProposalError("no blocks returned")
    keyed.sort(key=lambda item: item[0])
    return [triple for _, triple in keyed]


def propose_blocks(
    steps: StepList,
    backend: BackendDescriptor,
    max_new_tokens: int = 2048,
    temperature: float = 0.0,
) -> list[tuple[int, int, str]]:
    """Ask the chunking backend for block boundaries over the numbered steps."""
    prompt = chunking_prompt(steps.question, numbered_cot(steps))
    request = CompletionRequest(
        prompt_messages=(("user", prompt),),
        max_new_tokens=max_new_tokens,
        temperature=temperature,
    )
    result = complete(backend, request)
    return parse_proposal(result.text)


def _materialize(
    proposal: list[tuple[int, int, str]], steps: StepList, source: str
) -> ChunkedTrace:
    blocks = [
        ThoughtBlock(start, end, block_type, STEP_DELIMITER.join(steps.steps[start : end + 1]))
        for start, end, block_type in proposal
    ]
    return ChunkedTrace(question=steps.question, blocks=blocks, source=source)


def validate_blocks(proposal: list[tuple[int, int, str]], steps: StepList) -> ChunkedTrace:
    """Accept a proposal iff its ranges are in-bounds, ordered, disjoint, and cover every step."""
    step_count = len(steps.steps)
    if not proposal:
        raise EmptyProposalError("no blocks to validate")
    for idx, (start, end, _) in enumerate(proposal, start=1):
        if start < 0 or end >= step_count or start > end:
            raise BlockValidationError(
                "out_of_bounds", idx, f"range ({start}, {end}) with {step_count} steps"
            )
    for idx in range(1, len(proposal)):
        if proposal[idx][0] < proposal[idx - 1][0]:
            raise BlockValidationError(
                "disorder", idx + 1, f"start {proposal[idx][0]} before previous start {proposal[idx - 1][0]}"
            )
    for idx in range(1, len(proposal)):
        if proposal[idx][0] <= proposal[idx - 1][1]:
            raise BlockValidationError(
                "overlap", idx + 1, f"start {proposal[idx][0]} overlaps previous end {proposal[idx - 1][1]}"
            )
    prev_end = -1
    for idx, (start, end, _) in enumerate(proposal, start=1):
        if start > prev_end + 1:
            raise BlockValidationError("gap", idx, f"step {prev_end + 1} uncovered")
        prev_end = end
    if prev_end != step_count - 1:
        raise BlockValidationError("gap", len(proposal), f"step {prev_end + 1} uncovered")
    return _materialize(proposal, steps, "llm_proposed")


def repair_blocks(proposal: list[tuple[int, int, str]], steps: StepList) -> ChunkedTrace:
    """Deterministically coerce a proposal into a valid trace.

    Sort by start, clamp into bounds, truncate the earlier block on overlap,
    extend the preceding block over gaps (prepending an "unlabeled" block for a
    leading gap), and extend the last block to the final step.
    """
    step_count = len(steps.steps)
    clamped: list[list[object]] = []
    for start, end, block_type in proposal:
        if end < 0 or start >= step_count:
            continue
        start = max(0, start)
        end = min(end, step_count - 1)
        if start <= end:
            clamped.append([start, end, block_type])
    if not clamped:
        raise EmptyProposalError("no in-bounds blocks to repair")

    clamped.sort(key=lambda b: (b[0], b[1]))
    merged: list[list[object]] = []
    for block in clamped:
        while merged and block[0] <= merged[-1][1]:
            merged[-1][1] = block[0] - 1
            if merged[-1][0] > merged[-1][1]:
                merged.pop()
            else:
                break
        merged.append(block)

    if merged[0][0] > 0:
        merged.insert(0, [0, merged[0][0] - 1, "unlabeled"])
    for i in range(len(merged) - 1):
        if merged[i + 1][0] > merged[i][1] + 1:
            merged[i][1] = merged[i + 1][0] - 1
    merged[-1][1] = step_count - 1

    repaired = [(int(s), int(e), str(t)) for s, e, t in merged]
    trace = validate_blocks(repaired, steps)
    trace.source = "repaired"
    return trace


@dataclass(frozen=True)
class CorpusStats:
    min_thoughts: int
    avg_thoughts: float
    max_thoughts: int
    min_length: int
    avg_length: float
    max_length: int


def corpus_stats(traces: list[ChunkedTrace]) -> CorpusStats:
    """Thought-count and per-thought token-length summary over a chunked corpus."""
    if not traces:
        raise ValueError("empty corpus")
    counts = [t.n for t in traces]
    lengths = [length for t in traces for length in t.token_lengths()]
    return CorpusStats(
        min_thoughts=min(counts),
        avg_thoughts=sum(counts) / len(counts),
        max_thoughts=max(counts),
        min_length=min(lengths),
        avg_length=sum(lengths) / len(lengths),
        max_length=max(lengths),
    )


def trace_to_record(trace: ChunkedTrace) -> dict:
    return {
        "id": trace.trace_id,
        "question": trace.question,
        "source": trace.source,
        "blocks": [
            {"start": b.start, "end": b.end, "block_type": b.block_type, "text": b.text}
            for b in trace.blocks
        ],
    }


def trace_from_record(record: dict) -> ChunkedTrace:
    blocks = [
        ThoughtBlock(b["start"], b["end"], b["block_type"], b["text"]) for b in record["blocks"]
    ]
    return ChunkedTrace(
        question=record["question"],
        blocks=blocks,
        source=record.get("source", "manual"),
        trace_id=record.get("id"),
    )
