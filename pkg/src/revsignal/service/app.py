"""HTTP service exposing every pipeline stage.

The CLI is a thin client of this app (in-process by default); the endpoints
write the same artifacts a library caller would get from the pipeline
functions, so running a stage remotely or locally is equivalent.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, pipeline
from ..errors import RevsignalError
from .schemas import (
    HealthResponse,
    RecommendRequest,
    RecommendResponse,
    StageRequest,
    StageResponse,
)

_STAGES = {
    "ingest": pipeline.stage_ingest,
    "prepare": pipeline.stage_prepare,
    "metrics": pipeline.stage_metrics,
    "fit": pipeline.stage_fit,
    "evaluate": pipeline.stage_evaluate,
    "explain": pipeline.stage_explain,
    "describe": pipeline.stage_describe,
}


def create_app() -> FastAPI:
    app = FastAPI(title="revsignal", version=__version__)

    @app.exception_handler(RevsignalError)
    async def domain_error(_request: Request, exc: RevsignalError):
        return JSONResponse(status_code=400, content={
            "detail": str(exc), "kind": type(exc).__name__})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(version=__version__)

    def register(stage: str):
        runner = _STAGES[stage]

        @app.post(f"/{stage}", response_model=StageResponse, name=f"run_{stage}")
        def run_stage(request: StageRequest) -> StageResponse:
            summary = runner(request.config.to_run_config())
            return StageResponse(stage=stage, summary=summary)

    for stage in _STAGES:
        register(stage)

    @app.post("/recommend", response_model=RecommendResponse)
    def run_recommend(request: RecommendRequest) -> RecommendResponse:
        rankings = pipeline.recommend(
            request.config.to_run_config(),
            change=request.change.model_dump(),
            candidates=request.candidates,
            as_of=request.as_of,
            model_path=request.model_path,
            min_prob=request.min_prob,
        )
        return RecommendResponse(rankings=rankings)

    return app


app = create_app()
