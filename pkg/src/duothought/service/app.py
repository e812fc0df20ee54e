"""FastAPI service wrapping the core package; the CLI is a thin client of these endpoints."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..chunking import ChunkingError, StepList, repair_blocks, split_steps
from ..config import ConfigError, load_config
from ..dialogue import TagSet, TurnParseError, parse_turn
from ..metric import ErrorBoundReport, LengthFactors, MetricError, error_bound, joint_metric
from ..pipeline import STAGES, StageFailure, StageOrderError, run_stage, Manifest
from ..rewards import (
    AesBaseline,
    GroupSample,
    MuSchedule,
    aes,
    exact_match,
    extract_answer,
    length_reward,
    mu_schedule,
    pass_at_1,
)
from . import models


def create_app() -> FastAPI:
    app = FastAPI(title="duothought", version=__version__)

    @app.get("/health", response_model=models.HealthResponse)
    def health() -> models.HealthResponse:
        return models.HealthResponse(status="ok", version=__version__)

    @app.post("/pipeline/{stage}", response_model=models.StageResponse)
    def pipeline_stage(stage: str, request: models.StageRequest) -> models.StageResponse:
        if stage not in STAGES:
            raise HTTPException(status_code=404, detail=f"unknown stage {stage!r}")
        overrides = {
            key: value
            for key, value in {
                "workdir": request.workdir,
                "seed": request.seed,
                "concurrency": request.concurrency,
                "resume": request.resume,
            }.items()
            if value is not None
        }
        try:
            config = load_config(request.config_path, overrides)
            result = run_stage(stage, config)
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        except StageOrderError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except StageFailure as exc:
            return models.StageResponse(
                stage=stage, status="failed", outputs={}, errors=[str(exc)], backend_calls=0
            )
        return models.StageResponse(**result.to_dict())

    @app.get("/pipeline/manifest", response_model=models.ManifestResponse)
    def manifest(workdir: str) -> models.ManifestResponse:
        data = Manifest(workdir).data
        return models.ManifestResponse(stages=data.get("stages", {}))

    @app.post("/metric/joint", response_model=models.JointMetricResponse)
    def metric_joint(request: models.JointMetricRequest) -> models.JointMetricResponse:
        factors = LengthFactors(t1=request.t1, t2=request.t2, d_y=0, d_yi=0, d_cum=0)
        score = joint_metric(factors, request.p_hat, request.penalty_applied, request.delta)
        return models.JointMetricResponse(
            value=score.value, penalty_applied=score.penalty_applied, delta=score.delta
        )

    @app.post("/metric/error-bound", response_model=models.ErrorBoundResponse)
    def metric_error_bound(request: models.ErrorBoundRequest) -> models.ErrorBoundResponse:
        try:
            report: ErrorBoundReport = error_bound(request.n_sum, request.confidence)
        except MetricError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return models.ErrorBoundResponse(
            epsilon=report.epsilon,
            bound=report.bound,
            confidence=report.confidence,
            n_sum=report.n_sum,
        )

    @app.post("/eval/aes", response_model=models.AesResponse)
    def eval_aes(request: models.AesRequest) -> models.AesResponse:
        baseline = AesBaseline(
            acc_base=request.acc_base,
            length_base=request.length_base,
            weight_eta=request.weight_eta,
            weight_sigma_pos=request.weight_sigma_pos,
            weight_sigma_neg=request.weight_sigma_neg,
        )
        return models.AesResponse(aes=aes(request.acc_model, request.length_model, baseline))

    @app.post("/eval/pass-at-1", response_model=models.PassAt1Response)
    def eval_pass_at_1(request: models.PassAt1Request) -> models.PassAt1Response:
        return models.PassAt1Response(pass_at_1=pass_at_1(request.correct))

    @app.post("/eval/extract-answer", response_model=models.ExtractResponse)
    def eval_extract(request: models.ExtractRequest) -> models.ExtractResponse:
        return models.ExtractResponse(answer=extract_answer(request.text))

    @app.post("/eval/exact-match", response_model=models.ExactMatchResponse)
    def eval_exact_match(request: models.ExactMatchRequest) -> models.ExactMatchResponse:
        return models.ExactMatchResponse(exact_match=exact_match(request.pred, request.gold))

    @app.post("/reward/length", response_model=models.LengthRewardResponse)
    def reward_length(request: models.LengthRewardRequest) -> models.LengthRewardResponse:
        group = [GroupSample(total_length=s.length, correct=s.correct) for s in request.samples]
        return models.LengthRewardResponse(rewards=length_reward(group))

    @app.post("/reward/mu", response_model=models.MuScheduleResponse)
    def reward_mu(request: models.MuScheduleRequest) -> models.MuScheduleResponse:
        schedule = MuSchedule(
            warmup_steps=request.warmup_steps,
            ramp_steps=request.ramp_steps,
            mu_max=request.mu_max,
        )
        return models.MuScheduleResponse(mu=mu_schedule(request.step, schedule))

    @app.post("/dialogue/parse-turn", response_model=models.TurnModel)
    def dialogue_parse_turn(request: models.ParseTurnRequest) -> models.TurnModel:
        try:
            tags = TagSet(**request.tags.model_dump())
            turn = parse_turn(request.text, request.role, tags)
        except (TurnParseError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return models.TurnModel(role=turn.role, kind=turn.kind, body=turn.body)

    @app.post("/chunk/split", response_model=models.SplitStepsResponse)
    def chunk_split(request: models.SplitStepsRequest) -> models.SplitStepsResponse:
        try:
            steps = split_steps(request.question, request.cot_text)
        except ChunkingError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return models.SplitStepsResponse(steps=steps.steps)

    @app.post("/chunk/repair", response_model=models.RepairResponse)
    def chunk_repair(request: models.RepairRequest) -> models.RepairResponse:
        steps = StepList(question=request.question, steps=request.steps)
        proposal = [(b.start, b.end, b.block_type) for b in request.blocks]
        try:
            trace = repair_blocks(proposal, steps)
        except ChunkingError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        blocks = [
            models.BlockTriple(start=b.start, end=b.end, block_type=b.block_type)
            for b in trace.blocks
        ]
        return models.RepairResponse(blocks=blocks, source=trace.source)

    return app
