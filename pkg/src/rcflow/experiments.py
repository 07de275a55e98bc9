"""Experiment engine: trial generation, estimator evaluation, sweeps, and the
CSV/JSON output schemas. The HTTP service and the CLI are thin wrappers over
this module.

Seeding scheme (everything derives from the spec's root seed):

* pilots:   stream ("pilot", alpha_index) -- one pilot matrix per experiment,
  per pilot density
* channels: stream ("channel", trial) -- shared across SNR and alpha cells so
  sweeps compare on common random numbers
* noise:    stream ("noise", alpha_index, trial), drawn at unit scale and
  multiplied by sigma, so the realization is shared across the SNR axis
* solver:   integer seed derived from ("init", trial)

Identical spec + seed therefore reproduces every CSV byte for byte; wall-clock
timings go to a separate timings file that is exempt from that guarantee.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from . import __version__
from .analysis import NMSE_EXACT_SENTINEL, nmse_db, spectral_report
from .baselines import LmmseContext, least_squares, sample_row_covariance
from .channelgen import (
    ClusteredChannelModel,
    Dataset,
    GaussianChannelModel,
    sample_clustered,
    sample_dataset,
    save_dataset,
)
from .core import SystemDims, complex_gaussian, make_rng
from .measurement import Measurement, SnrConvention, generate_pilots, snr_to_sigma
from .network import load_network
from .prior import GaussianAnalyticField
from .solver import ADAPTIVE, DEFAULT_SIGMA_MAX, DEFAULT_SIGMA_MIN, SolverConfig, run

__all__ = [
    "ChannelSpec",
    "ExperimentSpec",
    "DatasetSpec",
    "SweepAxis",
    "ExperimentResult",
    "run_experiment",
    "run_sweep",
    "run_spectral",
    "generate_dataset",
    "pilot_count",
    "SCHEMAS",
]

EMPIRICAL_COV_SAMPLES = 2000


class ChannelSpec(BaseModel):
    """Channel model descriptor. ``row_cov_rho`` selects an exponential
    transmit-side correlation rho^|m-n| (0 means identity)."""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["gaussian", "clustered"] = "gaussian"
    row_cov_rho: float = 0.0
    n_paths: int = 3
    angle_spread: float = float(np.pi)

    @field_validator("row_cov_rho")
    @classmethod
    def _rho_range(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError("row_cov_rho must lie in [0, 1)")
        return v


class ExperimentSpec(BaseModel):
    """Everything a run/baseline/sweep/spectral command needs. Field names are
    the JSON config schema; the CLI exposes each as a kebab-case flag."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    n_r: int = 4
    n_t: int = 16
    channel: ChannelSpec = Field(default_factory=ChannelSpec)
    prior: str = "analytic"  # "analytic" or a weight-file path
    snr: list[float] = Field(default_factory=lambda: [10.0])
    alpha: list[float] = Field(default_factory=lambda: [0.6])
    lam: float = Field(2.0, alias="lambda")
    beta: float = 2.0
    n_outer: int = 10
    n_inner: int | Literal["adaptive"] = ADAPTIVE
    n_max: int = 50
    n_min: int = 3
    sigma_max: float = DEFAULT_SIGMA_MAX
    sigma_min: float = DEFAULT_SIGMA_MIN
    snr_convention: Literal["pilot", "channel"] = "pilot"
    trials: int = 100
    seed: int = 0
    parallel: int | None = None

    @field_validator("snr", "alpha")
    @classmethod
    def _non_empty(cls, v):
        if not v:
            raise ValueError("list must be non-empty")
        if len(set(v)) != len(v):
            raise ValueError("duplicate axis values are not allowed")
        return v

    @field_validator("alpha")
    @classmethod
    def _alpha_positive(cls, v):
        if any(a <= 0 for a in v):
            raise ValueError("alpha values must be positive")
        return v

    @field_validator("trials", "n_r", "n_t")
    @classmethod
    def _positive(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    def solver_config(self, seed: int, record_trace: bool = False) -> SolverConfig:
        return SolverConfig(lam=self.lam, beta=self.beta, n_outer=self.n_outer,
                            n_inner=self.n_inner, n_max=self.n_max, n_min=self.n_min,
                            sigma_max=self.sigma_max, sigma_min=self.sigma_min,
                            record_trace=record_trace, seed=seed)


class DatasetSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_r: int = 4
    n_t: int = 16
    channel: ChannelSpec = Field(default_factory=ChannelSpec)
    count: int = 100
    seed: int = 0
    name: str = "dataset.rcds"

    @field_validator("count")
    @classmethod
    def _count_ok(cls, v):
        if v < 0:
            raise ValueError("count must be non-negative")
        return v


SweepAxis = Literal["snr", "alpha", "lambda_beta", "n1_n2"]

SCHEMAS = {
    "results.csv": ("rcflow.results.v1",
                    ["trial", "snr_db", "alpha", "n_p", "estimator", "solver_seed",
                     "n_inner", "nmse_db", "nmse_is_exact", "residual_fro"]),
    "aggregate.csv": ("rcflow.aggregate.v1",
                      ["snr_db", "alpha", "n_p", "estimator", "trials",
                       "mean_nmse_db", "exact_count", "mean_residual_fro"]),
    "timings.csv": ("rcflow.timings.v1", ["trial", "snr_db", "alpha", "wall_ms"]),
    "sweep.csv": ("rcflow.sweep.v1",
                  ["snr_db", "alpha", "lambda", "beta", "n_outer", "n_inner", "trials",
                   "mean_nmse_db", "exact_count", "sweet_spot_n1", "sweet_spot_nmse_db"]),
    "spectral.csv": ("rcflow.spectral.v1",
                     ["k", "i", "t", "t_prime", "w", "rho_d", "rho_p", "rho_t",
                      "rho_d_converged", "rho_t_converged"]),
}


def pilot_count(alpha: float, n_t: int) -> int:
    """Pilot count for a target density: floor(alpha * n_t + 0.5), at least 1."""
    return max(1, int(np.floor(alpha * n_t + 0.5)))


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def render_csv(columns: list[str], rows: list[tuple]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)  # RFC-4180: CRLF line endings, minimal quoting
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def encode_nmse(value: float) -> tuple[float, int]:
    """CSV encoding of an NMSE value: exact matches (-inf) become the
    most-negative finite double plus a raised flag."""
    if value == float("-inf"):
        return float(NMSE_EXACT_SENTINEL), 1
    return float(value), 0


# ---------------------------------------------------------------------------
# per-trial machinery (module level so worker processes can import it)
# ---------------------------------------------------------------------------

def _row_cov(spec: ExperimentSpec) -> np.ndarray:
    ch = spec.channel
    if ch.kind == "gaussian":
        if ch.row_cov_rho == 0.0:
            return np.eye(spec.n_t, dtype=np.complex128)
        idx = np.arange(spec.n_t)
        return (ch.row_cov_rho ** np.abs(idx[:, None] - idx[None, :])).astype(np.complex128)
    # clustered: empirical transmit covariance from a dedicated stream
    model = ClusteredChannelModel(SystemDims(spec.n_r, spec.n_t, 1), ch.n_paths, ch.angle_spread)
    ds = sample_clustered(model, EMPIRICAL_COV_SAMPLES, make_rng(spec.seed, "rcov"))
    return sample_row_covariance(ds.samples)


def _draw_channel(spec: ExperimentSpec, trial: int) -> np.ndarray:
    rng = make_rng(spec.seed, "channel", trial)
    ch = spec.channel
    if ch.kind == "gaussian":
        # rows h = xi @ C^(1/2); reuse the cached Hermitian root
        xi = complex_gaussian((spec.n_r, spec.n_t), 1.0, rng)
        return xi @ _cached_cov_root(_spec_key(spec))
    # clustered trials skip the batch normalization: the geometric construction
    # already has unit entry power in expectation
    model = ClusteredChannelModel(SystemDims(spec.n_r, spec.n_t, 1), ch.n_paths, ch.angle_spread)
    return sample_clustered(model, 1, rng, normalize=False).samples[0]


def _spec_key(spec: ExperimentSpec) -> str:
    return spec.model_dump_json(by_alias=True)


@lru_cache(maxsize=32)
def _cached_spec(key: str) -> ExperimentSpec:
    return ExperimentSpec.model_validate_json(key)


@lru_cache(maxsize=32)
def _cached_row_cov(key: str) -> np.ndarray:
    return _row_cov(_cached_spec(key))


@lru_cache(maxsize=32)
def _cached_cov_root(key: str) -> np.ndarray:
    c = _cached_row_cov(key)
    w, u = np.linalg.eigh((c + c.conj().T) / 2)
    return (u * np.sqrt(np.clip(w, 0.0, None))) @ u.conj().T


@lru_cache(maxsize=64)
def _cached_pilots(key: str, alpha_idx: int) -> np.ndarray:
    spec = _cached_spec(key)
    n_p = pilot_count(spec.alpha[alpha_idx], spec.n_t)
    dims = SystemDims(spec.n_r, spec.n_t, n_p)
    return generate_pilots(dims, make_rng(spec.seed, "pilot", alpha_idx))


@lru_cache(maxsize=32)
def _cached_field(key: str):
    spec = _cached_spec(key)
    if spec.prior == "analytic":
        return GaussianAnalyticField(spec.n_t, row_cov=_cached_row_cov(key))
    return load_network(spec.prior)


def _sigma_for(spec: ExperimentSpec, snr_db: float) -> float:
    conv = SnrConvention.PILOT_DOMAIN if spec.snr_convention == "pilot" else SnrConvention.CHANNEL_DOMAIN
    return snr_to_sigma(snr_db, conv, n_t=spec.n_t)


def _derive_seed(spec: ExperimentSpec, *path) -> int:
    return int(make_rng(spec.seed, *path).integers(0, 2**63 - 1))


def _build_measurement(spec: ExperimentSpec, key: str, snr_idx: int, alpha_idx: int,
                       trial: int) -> tuple[Measurement, np.ndarray]:
    pilots = _cached_pilots(key, alpha_idx)
    sigma = _sigma_for(spec, spec.snr[snr_idx])
    h_true = _draw_channel(spec, trial)
    noise = complex_gaussian((spec.n_r, pilots.shape[1]), 1.0, make_rng(spec.seed, "noise", alpha_idx, trial))
    y = h_true @ pilots + sigma * noise
    return Measurement(y=y, pilots=pilots, sigma_pilot=sigma), h_true


def _trial_worker(payload: dict) -> dict:
    spec = _cached_spec(payload["key"])
    snr_idx, alpha_idx, trial = payload["snr_idx"], payload["alpha_idx"], payload["trial"]
    estimator = payload["estimator"]
    started = time.perf_counter()

    meas, h_true = _build_measurement(spec, payload["key"], snr_idx, alpha_idx, trial)
    solver_seed = _derive_seed(spec, "init", trial)
    n_inner_used = 0
    trace_nmse = None
    if estimator == "rcflow":
        cfg = spec.solver_config(solver_seed, record_trace=payload.get("trace", False))
        est = run(meas, _cached_field(payload["key"]), cfg, ground_truth=h_true)
        h_hat, n_inner_used = est.h_est, est.n_inner_used
        if est.trace is not None:
            trace_nmse = est.trace.nmse_db[est.trace.outer_final_rows()].tolist()
    elif estimator == "lmmse":
        h_hat = LmmseContext.from_measurement(meas, _cached_row_cov(payload["key"])).apply(meas.y)
    elif estimator == "least-squares":
        h_hat = least_squares(meas)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")

    err2 = float(np.linalg.norm(h_hat - h_true) ** 2)
    ref2 = float(np.linalg.norm(h_true) ** 2)
    return {
        "snr_idx": snr_idx,
        "alpha_idx": alpha_idx,
        "trial": trial,
        "estimator": estimator,
        "solver_seed": solver_seed,
        "n_inner": n_inner_used,
        "nmse_db": nmse_db(h_hat, h_true),
        "linear_ratio": err2 / ref2,
        "residual_fro": float(np.linalg.norm(meas.y - h_hat @ meas.pilots)),
        "wall_ms": (time.perf_counter() - started) * 1e3,
        "trace_nmse_per_outer": trace_nmse,
        "trace_linear_per_outer": None if trace_nmse is None
        else (10.0 ** (np.asarray(trace_nmse) / 10.0)).tolist(),
    }


def _run_trials(spec: ExperimentSpec, estimator: str, trace: bool = False) -> list[dict]:
    key = _spec_key(spec)
    payloads = [
        {"key": key, "snr_idx": s, "alpha_idx": a, "trial": tr,
         "estimator": estimator, "trace": trace}
        for s in range(len(spec.snr))
        for a in range(len(spec.alpha))
        for tr in range(spec.trials)
    ]
    if spec.parallel is not None:
        workers = spec.parallel
    elif hasattr(os, "sched_getaffinity"):
        workers = len(os.sched_getaffinity(0))
    else:
        workers = os.cpu_count() or 1
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_trial_worker, payloads, chunksize=8))
    else:
        results = [_trial_worker(p) for p in payloads]
    results.sort(key=lambda r: (r["snr_idx"], r["alpha_idx"], r["trial"]))
    return results


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class ExperimentResult(BaseModel):
    summary: dict
    files: dict[str, str]  # name -> text content
    binary_files: dict[str, bytes] = Field(default_factory=dict)

    model_config = ConfigDict(arbitrary_types_allowed=True)


def _metadata(command: str, spec_dump: dict, extra: dict | None = None) -> str:
    meta = {
        "command": command,
        "version": __version__,
        "schemas": {name: SCHEMAS[name][0] for name in SCHEMAS},
        "spec": spec_dump,
    }
    if extra:
        meta.update(extra)
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def run_experiment(spec: ExperimentSpec, estimator: str = "rcflow") -> ExperimentResult:
    """The run/baseline command: per-trial rows plus per-(SNR, alpha) aggregates."""
    results = _run_trials(spec, estimator)
    rows, timing_rows = [], []
    for r in results:
        enc, flag = encode_nmse(r["nmse_db"])
        rows.append((r["trial"], spec.snr[r["snr_idx"]], spec.alpha[r["alpha_idx"]],
                     pilot_count(spec.alpha[r["alpha_idx"]], spec.n_t), r["estimator"],
                     r["solver_seed"], r["n_inner"], enc, flag, r["residual_fro"]))
        timing_rows.append((r["trial"], spec.snr[r["snr_idx"]], spec.alpha[r["alpha_idx"]], r["wall_ms"]))

    agg_rows = []
    for s, snr in enumerate(spec.snr):
        for a, alpha in enumerate(spec.alpha):
            cell = [r for r in results if r["snr_idx"] == s and r["alpha_idx"] == a]
            ratios = np.array([r["linear_ratio"] for r in cell])
            mean_ratio = float(np.mean(ratios))
            mean_db = float("-inf") if mean_ratio == 0.0 else 10.0 * np.log10(mean_ratio)
            enc, _ = encode_nmse(mean_db)
            agg_rows.append((snr, alpha, pilot_count(alpha, spec.n_t), estimator, len(cell), enc,
                             sum(1 for r in cell if r["linear_ratio"] == 0.0),
                             float(np.mean([r["residual_fro"] for r in cell]))))

    files = {
        "results.csv": render_csv(SCHEMAS["results.csv"][1], rows),
        "aggregate.csv": render_csv(SCHEMAS["aggregate.csv"][1], agg_rows),
        "timings.csv": render_csv(SCHEMAS["timings.csv"][1], timing_rows),
        "metadata.json": _metadata("run" if estimator == "rcflow" else "baseline",
                                   spec.model_dump(by_alias=True), {"estimator": estimator}),
    }
    summary = {
        "trials": len(results),
        "cells": [{"snr_db": row[0], "alpha": row[1], "mean_nmse_db": row[5]} for row in agg_rows],
    }
    return ExperimentResult(summary=summary, files=files)


def run_sweep(spec: ExperimentSpec, axis: SweepAxis,
              lambda_values: list[float] | None = None,
              beta_values: list[float] | None = None,
              n_outer_values: list[int] | None = None,
              n_inner_values: list[int] | None = None) -> ExperimentResult:
    """Grid evaluation along one axis family. For the lambda-beta axis each
    cell also reports the sweet spot: the outer iteration (1-based) whose mean
    NMSE over trials is lowest."""

    def _require(values, name):
        if not values:
            raise ValueError(f"sweep axis {axis!r} requires {name}")
        if len(set(values)) != len(values):
            raise ValueError(f"duplicate axis values in {name}")
        return values

    rows = []
    # schedule/iteration grids evaluate at the first (snr, alpha) cell; the
    # snr/alpha axes sweep their own lists one value per cell
    pin = {"snr": [spec.snr[0]], "alpha": [spec.alpha[0]]}
    if axis == "snr":
        cells = [({"snr": [v], "alpha": pin["alpha"]}, {"snr_db": v}) for v in spec.snr]
    elif axis == "alpha":
        cells = [({"alpha": [v], "snr": pin["snr"]}, {"alpha": v}) for v in spec.alpha]
    elif axis == "lambda_beta":
        lams = _require(lambda_values, "lambda_values")
        betas = _require(beta_values, "beta_values")
        cells = [({**pin, "lam": lv, "beta": bv}, {"lambda": lv, "beta": bv})
                 for lv in lams for bv in betas]
    elif axis == "n1_n2":
        n1s = _require(n_outer_values, "n_outer_values")
        n2s = _require(n_inner_values, "n_inner_values")
        cells = [({**pin, "n_outer": n1, "n_inner": n2}, {"n_outer": n1, "n_inner": n2})
                 for n1 in n1s for n2 in n2s]
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")

    base = spec.model_dump(by_alias=True)
    for patch, label in cells:
        cell_spec = ExperimentSpec.model_validate({**base, **{
            ("lambda" if k == "lam" else k): v for k, v in patch.items()
        }})
        want_trace = axis == "lambda_beta"
        results = _run_trials(cell_spec, "rcflow", trace=want_trace)
        ratios = np.array([r["linear_ratio"] for r in results])
        mean_ratio = float(np.mean(ratios))
        mean_db, _ = encode_nmse(float("-inf") if mean_ratio == 0.0 else 10.0 * np.log10(mean_ratio))
        sweet_n1, sweet_db = -1, float("nan")
        if want_trace:
            curves = np.array([r["trace_linear_per_outer"] for r in results])
            curve_db = 10.0 * np.log10(np.mean(curves, axis=0))
            sweet_idx = int(np.argmin(curve_db))
            sweet_n1, sweet_db = sweet_idx + 1, float(curve_db[sweet_idx])
        rows.append((label.get("snr_db", cell_spec.snr[0]), label.get("alpha", cell_spec.alpha[0]),
                     label.get("lambda", cell_spec.lam), label.get("beta", cell_spec.beta),
                     label.get("n_outer", cell_spec.n_outer),
                     label.get("n_inner", cell_spec.n_inner if cell_spec.n_inner != ADAPTIVE else -1),
                     len(results), mean_db,
                     sum(1 for r in results if r["linear_ratio"] == 0.0), sweet_n1, sweet_db))

    files = {
        "sweep.csv": render_csv(SCHEMAS["sweep.csv"][1], rows),
        "metadata.json": _metadata("sweep", spec.model_dump(by_alias=True), {"axis": axis}),
    }
    return ExperimentResult(summary={"axis": axis, "cell_count": len(rows)}, files=files)


def run_spectral(spec: ExperimentSpec, fd_iters: int = 200, fd_tol: float = 1e-8) -> ExperimentResult:
    """Spectral radii along one solver trajectory at the first (SNR, alpha) cell."""
    key = _spec_key(spec)
    meas, _ = _build_measurement(spec, key, 0, 0, 0)
    cfg = spec.solver_config(_derive_seed(spec, "init", 0))
    report = spectral_report(meas, _cached_field(key), cfg, fd_iters=fd_iters, fd_tol=fd_tol)
    rows = [
        (int(report.k[j]), int(report.i[j]), report.t[j], report.t_prime[j], report.w[j],
         report.rho_d[j], report.rho_p[j], report.rho_t[j],
         bool(report.rho_d_converged[j]), bool(report.rho_t_converged[j]))
        for j in range(len(report))
    ]
    files = {
        "spectral.csv": render_csv(SCHEMAS["spectral.csv"][1], rows),
        "metadata.json": _metadata("spectral", spec.model_dump(by_alias=True), {
            "methods": {"rho_p": report.rho_p_method, "rho_d": report.rho_d_method,
                        "rho_t": report.rho_t_method},
        }),
    }
    summary = {"steps": len(report), "max_rho_t": float(np.max(report.rho_t))}
    return ExperimentResult(summary=summary, files=files)


def generate_dataset(spec: DatasetSpec) -> tuple[Dataset, ExperimentResult]:
    """The gen-data command; returns the dataset plus its serialized bytes."""
    dims = SystemDims(spec.n_r, spec.n_t, spec.n_t)  # pilot count is irrelevant here
    if spec.channel.kind == "gaussian":
        exp = ExperimentSpec(n_r=spec.n_r, n_t=spec.n_t, channel=spec.channel, seed=spec.seed)
        model = GaussianChannelModel(dims, row_cov=_row_cov(exp))
    else:
        model = ClusteredChannelModel(dims, spec.channel.n_paths, spec.channel.angle_spread)
    ds = sample_dataset(model, spec.count, spec.seed)

    with tempfile.NamedTemporaryFile(delete=False) as tmp:
        tmp_path = tmp.name
    try:
        save_dataset(ds, tmp_path)
        with open(tmp_path, "rb") as f:
            payload = f.read()
    finally:
        os.unlink(tmp_path)

    result = ExperimentResult(
        summary={"count": len(ds), "mean_entry_power": ds.mean_entry_power(),
                 "normalized": ds.normalized},
        files={"metadata.json": _metadata("gen-data", spec.model_dump(), {})},
        binary_files={spec.name: payload},
    )
    return ds, result
