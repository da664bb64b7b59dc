"""Request and response models for the pipeline service."""

from __future__ import annotations

from pydantic import BaseModel, Field

from ..pipeline import RunConfig


class ConfigPayload(BaseModel):
    dataset: str | None = None
    out: str = "out"
    seed: int | None = None
    jobs: int = 1
    subsystem_rule: str = "project"
    bots_file: str | None = None
    bot_min_matches: int = 20
    bot_match_ratio: float = 0.9
    cluster_threshold: float = 0.7
    r2_threshold: float = 0.9
    high_ratio: float = 0.3
    spline_dof: int = 3
    budget: int | None = None
    iterations: int = 1000
    threshold: float = 0.5
    hexbin_width: float = 1.0
    grid_size: int = 100
    model_set: str = "both"
    where: str | None = None
    gerrit_url: str | None = None
    gerrit_query: str | None = None
    page_size: int = 500
    rate_limit: float = 4.0

    def to_run_config(self) -> RunConfig:
        return RunConfig(**self.model_dump())


class StageRequest(BaseModel):
    config: ConfigPayload = Field(default_factory=ConfigPayload)


class StageResponse(BaseModel):
    ok: bool = True
    stage: str
    summary: dict


class ChangeDescriptor(BaseModel):
    project: str = ""
    subsystem: str | None = None
    modules: list[str]
    author: str
    patch_size: int = 0


class RecommendRequest(BaseModel):
    config: ConfigPayload = Field(default_factory=ConfigPayload)
    change: ChangeDescriptor
    candidates: list[str]
    as_of: str
    model_path: str | None = None
    min_prob: float | None = None


class RecommendationEntry(BaseModel):
    reviewer: str
    probability: float
    cold_start: bool = False
    recommended: bool | None = None


class RecommendResponse(BaseModel):
    rankings: list[RecommendationEntry]
    note: str = "scores are estimated participation likelihood"


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str
