"""FastAPI application exposing the core operations over HTTP."""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from . import ops, schemas


def create_app() -> FastAPI:
    app = FastAPI(title="semiheal", version=__version__)

    @app.exception_handler(ValueError)
    async def _validation_error(request: Request, exc: ValueError) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(RuntimeError)
    async def _runtime_error(request: Request, exc: RuntimeError) -> JSONResponse:
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    async def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/gen", response_model=schemas.GenResponse)
    async def gen(req: schemas.GenRequest) -> dict:
        return ops.op_gen(
            req.n, req.count, req.seed, req.seed_cells, req.distinct_classes
        )

    @app.post("/corrupt", response_model=schemas.CorruptResponse)
    async def corrupt(req: schemas.CorruptRequest) -> dict:
        return ops.op_corrupt(
            [t.model_dump() for t in req.tables], req.p, req.seed
        )

    @app.post("/trust", response_model=schemas.TrustResponse)
    async def trust(req: schemas.TrustRequest) -> dict:
        return ops.op_trust(req.table.model_dump(), req.symmetric)

    @app.post("/train", response_model=schemas.TrainResponse)
    async def train(req: schemas.TrainRequest) -> dict:
        return ops.op_train(
            [p.model_dump() for p in req.pairs],
            req.hyper.model_dump(),
            req.bilateral_votes,
            req.symmetric_trust,
        )

    @app.post("/heal", response_model=schemas.HealResponse)
    async def heal(req: schemas.HealRequest) -> dict:
        return ops.op_heal(
            [p.model_dump() for p in req.pairs],
            mode=req.mode,
            model=req.model,
            tau=req.tau,
            bilateral_votes=req.bilateral_votes,
            symmetric_trust=req.symmetric_trust,
            size_penalty_exponent=req.size_penalty_exponent,
            backtrack_budget=req.backtrack_budget,
        )

    @app.post("/experiment", response_model=schemas.ExperimentResponse)
    async def experiment(req: schemas.ExperimentRequest) -> dict:
        return ops.op_experiment(req.config)

    @app.post("/stats/exceeds-c", response_model=schemas.ExceedsCResponse)
    async def exceeds_c(req: schemas.ExceedsCRequest) -> dict:
        return ops.op_exceeds_c(req.n, req.p)

    @app.post("/stats/frequency", response_model=schemas.FrequencyResponse)
    async def frequency(req: schemas.FrequencyRequest) -> dict:
        return ops.op_frequency(req.table.model_dump())

    @app.post("/export", response_model=schemas.ExportResponse)
    async def export(req: schemas.ExportRequest) -> dict:
        return ops.op_export(req.records)

    return app
