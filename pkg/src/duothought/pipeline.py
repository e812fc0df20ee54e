"""Resumable pipeline stages over a shared work directory with a content-hashed manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import BackendError
from .chunking import (
    ChunkingError,
    split_steps,
    propose_blocks,
    repair_blocks,
    trace_from_record,
    trace_to_record,
    validate_blocks,
)
from .coldstart import (
    SynthesisError,
    build_sft_records,
    complete_short_thoughts,
    emit_sft_jsonl,
    select_long_thoughts,
)
from .config import ConfigError, RunConfig
from .dialogue import run_dialogue, transcript_from_record, transcript_text, transcript_to_record
from .metric import (
    ErrorBoundReport,
    IncompleteProfileError,
    LengthFactors,
    MetricScore,
    ScoredTrace,
    score_to_record,
    score_trace,
)
from .rewards import (
    DEFAULT_REFLECTION_PHRASES,
    aes,
    grade,
    pass_at_1,
    reflection_marker_count,
)
from .rollout import (
    RolloutProfile,
    config_fingerprint,
    prefix_hash,
    profile_to_records,
    rollout_trace,
    stats_from_record,
)

STAGES = ("chunk", "rollout", "score", "synthesize", "dialogue", "eval")
_UPSTREAM = {stage: STAGES[i - 1] if i else None for i, stage in enumerate(STAGES)}

MANIFEST_NAME = "manifest.json"


class StageOrderError(RuntimeError):
    """Raised when a stage runs before its upstream stage has completed."""


class StageFailure(RuntimeError):
    """Raised when a stage produces nothing usable."""


@dataclass
class StageResult:
    stage: str
    status: str  # done | partial | skipped | failed
    outputs: dict[str, str] = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)
    backend_calls: int = 0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "status": self.status,
            "outputs": self.outputs,
            "errors": self.errors,
            "backend_calls": self.backend_calls,
        }


def read_jsonl(path: Path) -> list[dict]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def write_jsonl(path: Path, records: list[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _hash_inputs(config_slice: dict, files: list[Path]) -> str:
    payload = {
        "config": config_slice,
        "files": {str(p.name): _sha256_file(p) for p in files if p.exists()},
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Manifest:
    """Per-stage status and content hashes, persisted as JSON inside the workdir."""

    def __init__(self, workdir: Path) -> None:
        self.path = Path(workdir) / MANIFEST_NAME
        self.data: dict = {"stages": {}}
        if self.path.exists():
            self.data = json.loads(self.path.read_text(encoding="utf-8"))

    def record(self, stage: str) -> dict | None:
        return self.data["stages"].get(stage)

    def status(self, stage: str) -> str:
        record = self.record(stage)
        return record["status"] if record else "pending"

    def outputs_intact(self, stage: str, workdir: Path) -> bool:
        record = self.record(stage)
        if not record:
            return False
        for name, digest in record.get("outputs", {}).items():
            path = workdir / name
            if not path.exists() or _sha256_file(path) != digest:
                return False
        return True

    def update(self, stage: str, status: str, input_hash: str, outputs: dict[str, str]) -> None:
        self.data["stages"][stage] = {
            "status": status,
            "input_hash": input_hash,
            "outputs": outputs,
        }
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, ensure_ascii=False), encoding="utf-8")


def _corpus_by_id(config: RunConfig) -> dict[str, dict]:
    items = read_jsonl(config.input_path)
    by_id = {}
    for item in items:
        if "id" not in item:
            raise ConfigError("corpus records need an id field")
        by_id[str(item["id"])] = item
    return by_id


def _stage_gate(stage: str, manifest: Manifest) -> None:
    upstream = _UPSTREAM[stage]
    if upstream and manifest.status(upstream) not in ("done", "partial"):
        raise StageOrderError(f"stage {stage!r} requires {upstream!r} to have run first")


def _finish(
    stage: str,
    manifest: Manifest,
    workdir: Path,
    input_hash: str,
    outputs: list[Path],
    errors: list[str],
    produced: int,
    backend_calls: int,
) -> StageResult:
    if produced == 0:
        manifest.update(stage, "failed", input_hash, {})
        raise StageFailure(f"stage {stage!r}: every item failed: {errors[:3]}")
    status = "partial" if errors else "done"
    hashes = {str(p.relative_to(workdir)): _sha256_file(p) for p in outputs}
    manifest.update(stage, status, input_hash, hashes)
    return StageResult(stage, status, {p.name: str(p) for p in outputs}, errors, backend_calls)


def _maybe_skip(
    stage: str, manifest: Manifest, workdir: Path, input_hash: str
) -> StageResult | None:
    record = manifest.record(stage)
    if (
        record
        and record["status"] == "done"
        and record["input_hash"] == input_hash
        and manifest.outputs_intact(stage, workdir)
    ):
        outputs = {Path(name).name: str(workdir / name) for name in record["outputs"]}
        return StageResult(stage, "skipped", outputs, [], 0)
    return None


def stage_chunk(config: RunConfig, manifest: Manifest) -> StageResult:
    workdir = config.workdir
    input_hash = _hash_inputs(
        {"backend": config.backend_section("chunk"), **config.section("paths")},
        [config.input_path],
    )
    skipped = _maybe_skip("chunk", manifest, workdir, input_hash)
    if skipped:
        return skipped

    backend = config.backend("chunk")
    out_path = workdir / "chunked.jsonl"
    records, errors = [], []
    for item in read_jsonl(config.input_path):
        trace_id = str(item.get("id"))
        try:
            steps = split_steps(item["question"], item["cot_text"])
            proposal = propose_blocks(steps, backend)
            try:
                trace = validate_blocks(proposal, steps)
            except ChunkingError:
                trace = repair_blocks(proposal, steps)
            trace.trace_id = trace_id
            records.append(trace_to_record(trace))
        except (ChunkingError, BackendError, KeyError) as exc:
            errors.append(f"{trace_id}: {exc}")
    write_jsonl(out_path, records)
    return _finish(
        "chunk", manifest, workdir, input_hash, [out_path], errors, len(records), backend.calls
    )


def stage_rollout(config: RunConfig, manifest: Manifest) -> StageResult:
    workdir = config.workdir
    chunked_path = workdir / "chunked.jsonl"
    input_hash = _hash_inputs(
        {"backend": config.backend_section("base"), **config.section("rollout", "seed", "concurrency")},
        [chunked_path, config.input_path],
    )
    skipped = _maybe_skip("rollout", manifest, workdir, input_hash)
    if skipped:
        return skipped
    _stage_gate("rollout", manifest)

    backend = config.backend("base")
    corpus = _corpus_by_id(config)
    out_path = workdir / "profiles.jsonl"
    sample_key = config_fingerprint(config.rollout)

    existing: dict[tuple[str, int], dict] = {}
    if config.resume and out_path.exists():
        for record in read_jsonl(out_path):
            if record.get("config_key") == sample_key:
                existing[(str(record["id"]), int(record["i"]))] = record

    all_records, errors = [], []
    produced = 0
    for item in read_jsonl(chunked_path):
        trace = trace_from_record(item)
        trace_id = str(trace.trace_id)
        gold = corpus.get(trace_id, {}).get("gold")
        if gold is None:
            errors.append(f"{trace_id}: no gold answer in corpus")
            continue
        completed = {}
        for i in range(trace.n + 1):
            record = existing.get((trace_id, i))
            if record and not record.get("partial") and record.get("prefix_hash") == prefix_hash(trace, i):
                completed[i] = stats_from_record(record)
        profile = rollout_trace(
            trace, str(gold), config.rollout, backend, grade,
            max_workers=config.concurrency, completed=completed,
        )
        partial = [i for i, s in profile.stats.items() if s.partial]
        if partial:
            errors.append(f"{trace_id}: partial rollout at indices {sorted(partial)}")
        for record in profile_to_records(profile):
            record["config_key"] = sample_key
            all_records.append(record)
        produced += 1
    write_jsonl(out_path, all_records)
    return _finish(
        "rollout", manifest, workdir, input_hash, [out_path], errors, produced, backend.calls
    )


def _load_profiles(config: RunConfig) -> tuple[dict[str, RolloutProfile], list[str]]:
    workdir = config.workdir
    corpus = _corpus_by_id(config)
    traces = {
        str(r["id"]): trace_from_record(r) for r in read_jsonl(workdir / "chunked.jsonl")
    }
    profiles: dict[str, RolloutProfile] = {}
    errors: list[str] = []
    for record in read_jsonl(workdir / "profiles.jsonl"):
        trace_id = str(record["id"])
        trace = traces.get(trace_id)
        if trace is None:
            errors.append(f"{trace_id}: profile without chunked trace")
            continue
        profile = profiles.setdefault(
            trace_id,
            RolloutProfile(trace=trace, gold_answer=str(corpus.get(trace_id, {}).get("gold", ""))),
        )
        profile.stats[int(record["i"])] = stats_from_record(record)
    return profiles, errors


def stage_score(config: RunConfig, manifest: Manifest) -> StageResult:
    workdir = config.workdir
    inputs = [workdir / "profiles.jsonl", workdir / "chunked.jsonl"]
    input_hash = _hash_inputs(config.section("delta", "confidence", "budgets"), inputs)
    skipped = _maybe_skip("score", manifest, workdir, input_hash)
    if skipped:
        return skipped
    _stage_gate("score", manifest)

    profiles, errors = _load_profiles(config)
    scored_path = workdir / "scored.jsonl"
    curves_path = workdir / "curves.csv"
    records = []
    curve_rows: list[tuple[int, str, int, float]] = []
    produced = 0
    for trace_id in sorted(profiles):
        profile = profiles[trace_id]
        try:
            scored = score_trace(profile, config.delta, config.confidence)
        except IncompleteProfileError as exc:
            errors.append(f"{trace_id}: {exc}")
            continue
        for i, score in enumerate(scored.scores, start=1):
            records.append(score_to_record(trace_id, i, score))
        for budget in config.budgets:
            budget_scores = score_trace(profile, config.delta, config.confidence, budget=budget)
            for i, score in enumerate(budget_scores.scores, start=1):
                curve_rows.append((budget, trace_id, i, score.value))
        produced += 1
    write_jsonl(scored_path, records)
    outputs = [scored_path]
    if config.budgets:
        curves_path.parent.mkdir(parents=True, exist_ok=True)
        with curves_path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["budget", "id", "i", "value"])
            writer.writerows(curve_rows)
        outputs.append(curves_path)
    return _finish("score", manifest, workdir, input_hash, outputs, errors, produced, 0)


def stage_synthesize(config: RunConfig, manifest: Manifest) -> StageResult:
    workdir = config.workdir
    inputs = [workdir / "scored.jsonl", workdir / "chunked.jsonl"]
    input_hash = _hash_inputs(
        {"backend": config.backend_section("complete"), **config.section("tags")}, inputs
    )
    skipped = _maybe_skip("synthesize", manifest, workdir, input_hash)
    if skipped:
        return skipped
    _stage_gate("synthesize", manifest)

    backend = config.backend("complete")
    traces = {str(r["id"]): trace_from_record(r) for r in read_jsonl(workdir / "chunked.jsonl")}
    by_trace: dict[str, dict[int, dict]] = {}
    for record in read_jsonl(workdir / "scored.jsonl"):
        by_trace.setdefault(str(record["id"]), {})[int(record["i"])] = record

    long_records, short_records, errors = [], [], []
    produced = 0
    for trace_id in sorted(by_trace):
        trace = traces.get(trace_id)
        if trace is None:
            errors.append(f"{trace_id}: scored rows without chunked trace")
            continue
        rows = by_trace[trace_id]
        try:
            scored = ScoredTrace(
                trace_id=trace_id,
                scores=[_row_to_score(rows[i]) for i in range(1, len(rows) + 1)],
            )
            mask = select_long_thoughts(scored)
            mixed = complete_short_thoughts(trace, mask, backend)
            longs, shorts = build_sft_records(mixed, tags=config.tags)
        except (KeyError, SynthesisError, BackendError) as exc:
            errors.append(f"{trace_id}: {exc}")
            continue
        long_records.extend(longs)
        short_records.extend(shorts)
        produced += 1
    long_path = workdir / "d_long.jsonl"
    short_path = workdir / "d_short.jsonl"
    emit_sft_jsonl(long_records, long_path)
    emit_sft_jsonl(short_records, short_path)
    return _finish(
        "synthesize", manifest, workdir, input_hash,
        [long_path, short_path], errors, produced, backend.calls,
    )


def _row_to_score(row: dict) -> MetricScore:
    factors = LengthFactors(t1=row["t1"], t2=row["t2"], d_y=0, d_yi=0, d_cum=0)
    report = None
    if row.get("epsilon") is not None:
        report = ErrorBoundReport(row["epsilon"], 0.95, row["bound"], 1)
    return MetricScore(
        value=row["value"],
        p_hat=row["p_hat"],
        penalty_applied=bool(row["penalty"]),
        delta=0.25,
        factors=factors,
        error_bound=report,
    )


def stage_dialogue(config: RunConfig, manifest: Manifest) -> StageResult:
    workdir = config.workdir
    input_hash = _hash_inputs(
        {"backend": config.backend_section("long", "short"), **config.section("dialogue", "tags", "seed")},
        [config.input_path],
    )
    skipped = _maybe_skip("dialogue", manifest, workdir, input_hash)
    if skipped:
        return skipped
    _stage_gate("dialogue", manifest)

    long_backend = config.backend("long")
    short_backend = config.backend("short")
    out_path = workdir / "transcripts.jsonl"
    records, errors = [], []
    for item in read_jsonl(config.input_path):
        question_id = str(item.get("id"))
        try:
            transcript = run_dialogue(
                item["question"],
                long_backend,
                short_backend,
                config.dialogue_limits,
                config.tags,
                temperature=config.dialogue_temperature,
                seed=config.seed,
                question_id=question_id,
            )
            records.append(transcript_to_record(transcript))
        except KeyError as exc:
            errors.append(f"{question_id}: corpus record missing {exc}")
    write_jsonl(out_path, records)
    calls = long_backend.calls + short_backend.calls
    return _finish(
        "dialogue", manifest, workdir, input_hash, [out_path], errors, len(records), calls
    )


def stage_eval(config: RunConfig, manifest: Manifest) -> StageResult:
    workdir = config.workdir
    transcripts_path = workdir / "transcripts.jsonl"
    input_hash = _hash_inputs(
        config.section("aes_baseline", "tags", "reflection_phrases"),
        [transcripts_path, config.input_path],
    )
    skipped = _maybe_skip("eval", manifest, workdir, input_hash)
    if skipped:
        return skipped
    _stage_gate("eval", manifest)
    if config.aes_baseline is None:
        raise ConfigError("eval stage requires an aes_baseline section")

    corpus = _corpus_by_id(config)
    phrases = config.reflection_phrases or DEFAULT_REFLECTION_PHRASES
    rows, correct_flags, lengths, errors = [], [], [], []
    for record in read_jsonl(transcripts_path):
        transcript = transcript_from_record(record)
        question_id = str(transcript.question_id)
        gold = corpus.get(question_id, {}).get("gold")
        if gold is None:
            errors.append(f"{question_id}: no gold answer in corpus")
            continue
        correct = grade(transcript_text(transcript, config.tags), str(gold))
        total_tokens = sum(transcript.token_counts)
        correct_flags.append(correct)
        lengths.append(total_tokens)
        rows.append(
            {
                "question_id": question_id,
                "correct": int(correct),
                "length": total_tokens,
                "turn_pairs": transcript.turn_pairs,
                "reflection_turns": reflection_marker_count(transcript, phrases),
            }
        )
    if not rows:
        manifest.update("eval", "failed", input_hash, {})
        raise StageFailure("eval: no gradable transcripts")

    acc = pass_at_1(correct_flags)
    avg_length = sum(lengths) / len(lengths)
    summary = {
        "pass_at_1": acc,
        "avg_length": avg_length,
        # AES compares accuracies on the baseline's percent scale.
        "aes": aes(acc * 100.0, avg_length, config.aes_baseline),
        "n_questions": len(rows),
    }
    summary_path = workdir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    csv_path = workdir / "per_question.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    return _finish(
        "eval", manifest, workdir, input_hash, [summary_path, csv_path], errors, len(rows), 0
    )


_STAGE_FUNCS = {
    "chunk": stage_chunk,
    "rollout": stage_rollout,
    "score": stage_score,
    "synthesize": stage_synthesize,
    "dialogue": stage_dialogue,
    "eval": stage_eval,
}


def run_stage(stage: str, config: RunConfig) -> StageResult:
    if stage not in _STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {STAGES}")
    config.workdir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(config.workdir)
    return _STAGE_FUNCS[stage](config, manifest)
