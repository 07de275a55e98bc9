"""FastAPI service wrapping the experiment engine.

Every computation endpoint takes a declarative spec and returns the produced
files inline, so clients (the bundled CLI in particular) stay thin: they build
requests, post them, and write the returned files to disk.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import __version__
from ..experiments import generate_dataset, run_experiment, run_spectral, run_sweep
from ..solver import NumericalFailure
from .schemas import (
    BaselineRequest,
    CommandResponse,
    GenDataRequest,
    HealthResponse,
    RunRequest,
    SpectralRequest,
    SweepRequest,
    encode_files,
)

__all__ = ["create_app"]


def create_app() -> FastAPI:
    app = FastAPI(title="rcflow", version=__version__)

    @app.exception_handler(ValueError)
    async def _value_error(_, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc), "error": "invalid-request"})

    @app.exception_handler(NumericalFailure)
    async def _numeric_error(_, exc: NumericalFailure):
        return JSONResponse(status_code=500, content={"detail": str(exc), "error": "numeric"})

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/experiments/run", response_model=CommandResponse)
    def experiments_run(req: RunRequest) -> CommandResponse:
        result = run_experiment(req.spec, estimator="rcflow")
        return CommandResponse(summary=result.summary, files=encode_files(result.files))

    @app.post("/experiments/baseline", response_model=CommandResponse)
    def experiments_baseline(req: BaselineRequest) -> CommandResponse:
        result = run_experiment(req.spec, estimator=req.estimator)
        return CommandResponse(summary=result.summary, files=encode_files(result.files))

    @app.post("/experiments/sweep", response_model=CommandResponse)
    def experiments_sweep(req: SweepRequest) -> CommandResponse:
        result = run_sweep(req.spec, req.axis,
                           lambda_values=req.lambda_values, beta_values=req.beta_values,
                           n_outer_values=req.n_outer_values, n_inner_values=req.n_inner_values)
        return CommandResponse(summary=result.summary, files=encode_files(result.files))

    @app.post("/diagnostics/spectral", response_model=CommandResponse)
    def diagnostics_spectral(req: SpectralRequest) -> CommandResponse:
        result = run_spectral(req.spec, fd_iters=req.fd_iters, fd_tol=req.fd_tol)
        return CommandResponse(summary=result.summary, files=encode_files(result.files))

    @app.post("/datasets/generate", response_model=CommandResponse)
    def datasets_generate(req: GenDataRequest) -> CommandResponse:
        _, result = generate_dataset(req.spec)
        return CommandResponse(summary=result.summary,
                               files=encode_files(result.files, result.binary_files))

    return app
