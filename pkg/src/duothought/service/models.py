"""Pydantic request/response schemas for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class StageRequest(BaseModel):
    config_path: str
    workdir: str | None = None
    seed: int | None = None
    concurrency: int | None = None
    resume: bool | None = None


class StageResponse(BaseModel):
    stage: str
    status: str
    outputs: dict[str, str]
    errors: list[str]
    backend_calls: int


class ManifestResponse(BaseModel):
    stages: dict[str, dict]


class JointMetricRequest(BaseModel):
    t1: float = Field(ge=0.0, lt=1.0)
    t2: float = Field(ge=0.0, lt=1.0)
    p_hat: float = Field(ge=0.0, le=1.0)
    penalty_applied: bool = False
    delta: float = Field(default=0.25, gt=0.0, lt=1.0)


class JointMetricResponse(BaseModel):
    value: float
    penalty_applied: bool
    delta: float


class ErrorBoundRequest(BaseModel):
    n_sum: int = Field(ge=1)
    confidence: float = Field(default=0.95, gt=0.0, lt=1.0)


class ErrorBoundResponse(BaseModel):
    epsilon: float
    bound: float
    confidence: float
    n_sum: int


class AesRequest(BaseModel):
    acc_model: float
    length_model: float
    acc_base: float = Field(gt=0.0)
    length_base: float = Field(gt=0.0)
    weight_eta: float = 1.0
    weight_sigma_pos: float = 3.0
    weight_sigma_neg: float = -5.0


class AesResponse(BaseModel):
    aes: float


class PassAt1Request(BaseModel):
    correct: list[bool] = Field(min_length=1)


class PassAt1Response(BaseModel):
    pass_at_1: float


class ExtractRequest(BaseModel):
    text: str


class ExtractResponse(BaseModel):
    answer: str | None


class ExactMatchRequest(BaseModel):
    pred: str | None
    gold: str


class ExactMatchResponse(BaseModel):
    exact_match: int


class LengthSample(BaseModel):
    length: int = Field(ge=0)
    correct: bool


class LengthRewardRequest(BaseModel):
    samples: list[LengthSample] = Field(min_length=1)


class LengthRewardResponse(BaseModel):
    rewards: list[float]


class MuScheduleRequest(BaseModel):
    step: int = Field(ge=0)
    warmup_steps: int = 0
    ramp_steps: int = Field(default=1, ge=1)
    mu_max: float = 0.0


class MuScheduleResponse(BaseModel):
    mu: float


class TagSetModel(BaseModel):
    think_start: str = "<think>"
    think_end: str = "</think>"
    answer_start: str = "<answer>"
    answer_end: str = "</answer>"
    rethink: str = "<rethink>"


class ParseTurnRequest(BaseModel):
    text: str
    role: str
    tags: TagSetModel = TagSetModel()


class TurnModel(BaseModel):
    role: str
    kind: str
    body: str


class SplitStepsRequest(BaseModel):
    question: str
    cot_text: str


class SplitStepsResponse(BaseModel):
    steps: list[str]


class BlockTriple(BaseModel):
    start: int
    end: int
    block_type: str


class RepairRequest(BaseModel):
    question: str = ""
    steps: list[str] = Field(min_length=1)
    blocks: list[BlockTriple] = Field(min_length=1)


class RepairResponse(BaseModel):
    blocks: list[BlockTriple]
    source: str
