"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateAssetsRequest(BaseModel):
    dest_dir: str
    n_backgrounds: int = Field(ge=1)
    n_cars: int = Field(ge=1)
    size: int = Field(default=64, ge=32)
    seed: int = 0


class GenerateAssetsResponse(BaseModel):
    library_dir: str
    n_backgrounds: int
    n_cars: int


class ValidateAnnotationRequest(BaseModel):
    path: str


class ValidateAnnotationResponse(BaseModel):
    ok: bool
    violations: list[str]


class SampleRequest(BaseModel):
    library_dir: str
    method: Literal["uniform", "halton", "ce", "feedback"] = "uniform"
    n: int = Field(default=1, ge=1)
    seed: int = 0
    halton_start: int = Field(default=1, ge=1)
    feedback_path: Optional[str] = None


class SampleResponse(BaseModel):
    modifications: list[dict]


class GenerateImagesRequest(BaseModel):
    library_dir: str
    out_dir: str
    manifest_name: str = "manifest.jsonl"
    modifications: Optional[list[dict]] = None
    n: Optional[int] = Field(default=None, ge=1)
    method: Literal["uniform", "halton", "ce", "feedback"] = "uniform"
    seed: int = 0
    halton_start: int = Field(default=1, ge=1)
    feedback_path: Optional[str] = None


class GenerateImagesResponse(BaseModel):
    manifest_path: str
    records: int
    rejected: int


class PerImageEval(BaseModel):
    precision: float
    recall: float
    misclassified: bool


class EvalRequest(BaseModel):
    library_dir: str
    manifest_path: str
    model: str
    retry_limit: int = 2


class EvalResponse(BaseModel):
    ap: float
    ar: float
    images: int
    misclassified: int
    per_image: list[PerImageEval]


class HarvestRequest(BaseModel):
    config: dict


class HarvestResponse(BaseModel):
    iterations: int
    counterexamples: int
    hit_rate: float
    wall_time_s: float
    stopped_because: str
    log_path: Optional[str]
    table_path: Optional[str]


class CyclesRequest(BaseModel):
    config: dict
    n_cycles: int = Field(ge=0)


class CyclesResponse(BaseModel):
    baseline: dict
    cycles: list[dict]
    seed: int
    wall_time_s: float
    report_path: str


class AnalyzeRequest(BaseModel):
    table_path: str
    max_k: int = Field(default=3, ge=1)
    top_n: int = Field(default=5, ge=1)
    library_dir: Optional[str] = None
    feedback_out: Optional[str] = None


class AnalyzeResponse(BaseModel):
    rows: int
    pca_ranking: list
    top_combos: list
    summary: str
    feedback_path: Optional[str] = None


class StandardAugmentRequest(BaseModel):
    manifest_path: str
    out_dir: str
    seed: int = 0
    fraction: float = Field(default=0.5, gt=0.0, le=1.0)


class StandardAugmentResponse(BaseModel):
    manifest_path: str
    originals: int
    augmented: int
    rejected: int
