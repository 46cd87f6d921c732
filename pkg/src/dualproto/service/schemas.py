"""Request/response models for the experiment service."""
from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GradCheckRequest(BaseModel):
    trials: int = Field(default=100, ge=1, le=10000)
    eps: float = Field(default=1e-5, gt=0)
    tolerance: float = Field(default=1e-5, gt=0)
    seed: int = 1993


class GradCheckResponse(BaseModel):
    trials: int
    eps: float
    tolerance: float
    max_relative_error: float
    passed: bool


class PretrainRequest(BaseModel):
    config_path: str
    seed: int | None = None
    out: str | None = None


class PretrainResponse(BaseModel):
    weights_path: str
    blocks: int
    feature_dim: int
    first_epoch_loss: float
    final_epoch_loss: float


class RunRequest(BaseModel):
    config_path: str
    method: str | None = None
    k: int | None = Field(default=None, ge=1)
    seed: int | None = None
    out: str | None = None


class StageMetrics(BaseModel):
    stage: int
    n_test: int
    accuracy: float
    topk_accuracy: float
    conditional_accuracy: float


class RunResponse(BaseModel):
    method: str
    seed: int
    k: int
    out_dir: str
    results_path: str
    average_accuracy: float
    final_accuracy: float
    stages: list[StageMetrics]
    wall_clock_seconds: float


class AblationRequest(BaseModel):
    config_path: str
    k: int | None = Field(default=None, ge=1)
    seed: int | None = None
    out: str | None = None


class AblationArm(BaseModel):
    method: str
    average_accuracy: float
    final_accuracy: float
    stage_accuracy: list[float]


class AblationResponse(BaseModel):
    seed: int
    k: int
    out_dir: str
    arms: list[AblationArm]


class EmbeddingsRequest(BaseModel):
    config_path: str
    which: Literal["raw", "adapted"] = "raw"
    seed: int | None = None
    out: str | None = None


class EmbeddingsResponse(BaseModel):
    path: str
    rows: int
    which: str


class ReportRequest(BaseModel):
    results_path: str


class ReportResponse(BaseModel):
    text: str
    average_accuracy: float
    final_accuracy: float


class PredictRequest(BaseModel):
    run_dir: str
    features: list[float]
    k: int | None = Field(default=None, ge=1)


class PredictResponse(BaseModel):
    predicted: int
    topk_labels: list[int]
    task_of_predicted: int


class ErrorResponse(BaseModel):
    detail: str
