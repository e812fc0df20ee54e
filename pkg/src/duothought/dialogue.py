"""Tag grammar and the alternating long/short two-backend dialogue state machine."""

from __future__ import annotations

from dataclasses import dataclass, field

from .backends import BackendDescriptor, BackendError, CompletionRequest, complete, derive_seed
from .prompts import compose_prompt, role_template
from .tokens import count_tokens

ROLE_LONG = "long"
ROLE_SHORT = "short"
KIND_THINK = "think"
KIND_ANSWER_FINAL = "answer_final"
KIND_ANSWER_RETHINK = "answer_rethink"

TERMINAL_ANSWERED = "answered"
TERMINAL_TURN_LIMIT = "turn_limit"
TERMINAL_PROTOCOL_ERROR = "protocol_error"


@dataclass(frozen=True)
class TagSet:
    think_start: str = "<think>"
    think_end: str = "</think>"
    answer_start: str = "<answer>"
    answer_end: str = "</answer>"
    rethink: str = "<rethink>"

    def __post_init__(self) -> None:
        tokens = self.all()
        if len(set(tokens)) != 5 or any(not t for t in tokens):
            raise ValueError("tags must be five distinct non-empty strings")
        for a in tokens:
            for b in tokens:
                if a != b and a in b:
                    raise ValueError(f"tag {a!r} is a substring of {b!r}")

    def all(self) -> tuple[str, str, str, str, str]:
        return (self.think_start, self.think_end, self.answer_start, self.answer_end, self.rethink)


DEFAULT_TAGS = TagSet()


class TurnParseError(ValueError):
    def __init__(self, kind: str, detail: str) -> None:
        super().__init__(f"{kind}: {detail}")
        self.kind = kind


class TagInBodyError(ValueError):
    pass


@dataclass(frozen=True)
class Turn:
    role: str
    kind: str
    body: str

    def __post_init__(self) -> None:
        if self.role == ROLE_LONG and self.kind != KIND_THINK:
            raise ValueError("long turns must be think turns")
        if self.role == ROLE_SHORT and self.kind not in (KIND_ANSWER_FINAL, KIND_ANSWER_RETHINK):
            raise ValueError("short turns must be answer turns")
        if self.role not in (ROLE_LONG, ROLE_SHORT):
            raise ValueError(f"unknown role: {self.role!r}")


@dataclass
class Transcript:
    question: str
    turns: list[Turn]
    terminal: str
    question_id: str | None = None
    token_counts: list[int] = field(default_factory=list)
    error: str | None = None

    @property
    def turn_count(self) -> int:
        return len(self.turns)

    @property
    def turn_pairs(self) -> int:
        return sum(1 for t in self.turns if t.role == ROLE_SHORT)


@dataclass
class DialogueLimits:
    max_turn_pairs: int = 4
    max_new_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.max_turn_pairs < 1:
            raise ValueError("max_turn_pairs must be >= 1")


def parse_turn(text: str, role: str, tags: TagSet = DEFAULT_TAGS) -> Turn:
    """Parse one generated turn under the role's grammar; surrounding whitespace is tolerated."""
    stripped = text.strip()
    open_tag = tags.think_start if role == ROLE_LONG else tags.answer_start
    wrong_open = tags.answer_start if role == ROLE_LONG else tags.think_start
    if not stripped.startswith(open_tag):
        if stripped.startswith(wrong_open) or any(
            stripped.startswith(t) for t in tags.all() if t != open_tag
        ):
            raise TurnParseError("wrong_tag", f"{role} turn opens with a foreign tag")
        raise TurnParseError("missing_open", f"expected {open_tag!r}")
    inner = stripped[len(open_tag):]

    if role == ROLE_LONG:
        closers = ((tags.think_end, KIND_THINK),)
    else:
        closers = ((tags.answer_end, KIND_ANSWER_FINAL), (tags.rethink, KIND_ANSWER_RETHINK))
    for closer, kind in closers:
        if inner.endswith(closer):
            body = inner[: -len(closer)]
            present = [t for t in tags.all() if t in body]
            if present:
                raise TurnParseError("nested_tags", f"body contains {present}")
            return Turn(role=role, kind=kind, body=body)
    raise TurnParseError("missing_close", f"expected one of {[c for c, _ in closers]!r}")


def render_turn(turn: Turn, tags: TagSet = DEFAULT_TAGS) -> str:
    """Inverse of parse_turn: parse_turn(render_turn(t), t.role) == t for every valid turn."""
    present = [t for t in tags.all() if t in turn.body]
    if present:
        raise TagInBodyError(f"turn body contains tag tokens {present}")
    if turn.kind == KIND_THINK:
        return f"{tags.think_start}{turn.body}{tags.think_end}"
    closer = tags.answer_end if turn.kind == KIND_ANSWER_FINAL else tags.rethink
    return f"{tags.answer_start}{turn.body}{closer}"


def render_history(turns: list[Turn], tags: TagSet = DEFAULT_TAGS) -> str:
    return "".join(render_turn(t, tags) for t in turns)


def transcript_text(transcript: Transcript, tags: TagSet = DEFAULT_TAGS) -> str:
    return render_history(transcript.turns, tags)


def _take_turn(
    backend: BackendDescriptor,
    template: str,
    question: str,
    turns: list[Turn],
    role: str,
    tags: TagSet,
    limits: DialogueLimits,
    temperature: float,
    seed: int,
    pair: int,
) -> tuple[Turn, int]:
    """One role turn with a single resample retry on a malformed generation."""
    prompt = compose_prompt(template, question, render_history(turns, tags))
    if role == ROLE_LONG:
        stops = (tags.think_end,)
    else:
        stops = (tags.answer_end, tags.rethink)
    last_error: Exception | None = None
    for attempt in range(2):
        request = CompletionRequest(
            prompt_messages=(("user", prompt),),
            max_new_tokens=limits.max_new_tokens,
            temperature=temperature,
            stop_sequences=stops,
            seed=derive_seed(seed, pair, role, attempt) % (2**31),
        )
        result = complete(backend, request)
        try:
            return parse_turn(result.text, role, tags), result.completion_tokens
        except TurnParseError as exc:
            last_error = exc
    assert last_error is not None
    raise last_error


def run_dialogue(
    question: str,
    long_backend: BackendDescriptor,
    short_backend: BackendDescriptor,
    limits: DialogueLimits = DialogueLimits(),
    tags: TagSet = DEFAULT_TAGS,
    templates: tuple[str, str] | None = None,
    temperature: float = 1.0,
    seed: int = 0,
    question_id: str | None = None,
) -> Transcript:
    """Alternate long and short turns until a final answer, the pair budget, or a protocol error.

    Every backend call sees its role template, the question, and the verbatim
    rendered history of all prior turns.
    """
    long_template, short_template = templates or (
        role_template(ROLE_LONG, tags),
        role_template(ROLE_SHORT, tags),
    )
    turns: list[Turn] = []
    token_counts: list[int] = []
    terminal = TERMINAL_TURN_LIMIT
    error: str | None = None

    for pair in range(limits.max_turn_pairs):
        try:
            turn, tokens = _take_turn(
                long_backend, long_template, question, turns, ROLE_LONG,
                tags, limits, temperature, seed, pair,
            )
            turns.append(turn)
            token_counts.append(tokens)
            turn, tokens = _take_turn(
                short_backend, short_template, question, turns, ROLE_SHORT,
                tags, limits, temperature, seed, pair,
            )
            turns.append(turn)
            token_counts.append(tokens)
        except (TurnParseError, BackendError) as exc:
            terminal = TERMINAL_PROTOCOL_ERROR
            error = str(exc)
            break
        if turn.kind == KIND_ANSWER_FINAL:
            terminal = TERMINAL_ANSWERED
            break

    return Transcript(
        question=question,
        turns=turns,
        terminal=terminal,
        question_id=question_id,
        token_counts=token_counts,
        error=error,
    )


@dataclass(frozen=True)
class DialogueStats:
    min_pairs: int
    avg_pairs: float
    max_pairs: int
    avg_long_tokens: float
    avg_short_tokens: float


def transcript_stats(transcripts: list[Transcript]) -> DialogueStats:
    """Turn-pair and per-role token-length summaries over a transcript collection."""
    if not transcripts:
        raise ValueError("no transcripts to summarize")
    pairs = [t.turn_pairs for t in transcripts]
    long_tokens: list[int] = []
    short_tokens: list[int] = []
    for t in transcripts:
        counts = t.token_counts or [count_tokens(turn.body) for turn in t.turns]
        for turn, tokens in zip(t.turns, counts):
            (long_tokens if turn.role == ROLE_LONG else short_tokens).append(tokens)
    return DialogueStats(
        min_pairs=min(pairs),
        avg_pairs=sum(pairs) / len(pairs),
        max_pairs=max(pairs),
        avg_long_tokens=sum(long_tokens) / len(long_tokens) if long_tokens else 0.0,
        avg_short_tokens=sum(short_tokens) / len(short_tokens) if short_tokens else 0.0,
    )


def transcript_to_record(transcript: Transcript) -> dict:
    return {
        "question_id": transcript.question_id,
        "question": transcript.question,
        "turns": [{"role": t.role, "kind": t.kind, "body": t.body} for t in transcript.turns],
        "terminal": transcript.terminal,
        "token_counts": transcript.token_counts,
        "error": transcript.error,
    }


def transcript_from_record(record: dict) -> Transcript:
    turns = [Turn(t["role"], t["kind"], t["body"]) for t in record["turns"]]
    return Transcript(
        question=record.get("question", ""),
        turns=turns,
        terminal=record["terminal"],
        question_id=record.get("question_id"),
        token_counts=list(record.get("token_counts", [])),
        error=record.get("error"),
    )
