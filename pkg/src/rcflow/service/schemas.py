"""Request/response models for the HTTP service."""

from __future__ import annotations

import base64
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field

from ..experiments import DatasetSpec, ExperimentSpec, SweepAxis

__all__ = [
    "FilePayload",
    "CommandResponse",
    "RunRequest",
    "BaselineRequest",
    "SweepRequest",
    "SpectralRequest",
    "GenDataRequest",
    "HealthResponse",
    "encode_files",
]


class FilePayload(BaseModel):
    kind: Literal["text", "binary"]
    content: str  # text verbatim, binary as base64


class CommandResponse(BaseModel):
    summary: dict
    files: dict[str, FilePayload]


class RunRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    spec: ExperimentSpec


class BaselineRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    spec: ExperimentSpec
    estimator: Literal["lmmse", "least-squares"] = "lmmse"


class SweepRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    spec: ExperimentSpec
    axis: SweepAxis
    lambda_values: list[float] | None = None
    beta_values: list[float] | None = None
    n_outer_values: list[int] | None = None
    n_inner_values: list[int] | None = None


class SpectralRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)
    spec: ExperimentSpec
    fd_iters: int = Field(200, ge=1)
    fd_tol: float = Field(1e-8, gt=0)


class GenDataRequest(BaseModel):
    spec: DatasetSpec


class HealthResponse(BaseModel):
    status: str
    version: str


def encode_files(text_files: dict[str, str], binary_files: dict[str, bytes] | None = None) -> dict[str, FilePayload]:
    out = {name: FilePayload(kind="text", content=body) for name, body in text_files.items()}
    for name, body in (binary_files or {}).items():
        out[name] = FilePayload(kind="binary", content=base64.b64encode(body).decode("ascii"))
    return out
