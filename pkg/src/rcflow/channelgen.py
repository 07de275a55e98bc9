"""Synthetic channel models and the dataset file format.

Two generators are provided: correlated-row Gaussian channels (for which the
LMMSE baseline is the exact posterior mean, making end-to-end oracle tests
possible) and a clustered geometric model with half-wavelength uniform linear
arrays at both ends (exactly low-rank, standing in for ray-traced profiles).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import SystemDims, as_complex_matrix, complex_gaussian, make_rng

__all__ = [
    "GaussianChannelModel",
    "ClusteredChannelModel",
    "Dataset",
    "sample_gaussian",
    "sample_clustered",
    "save_dataset",
    "load_dataset",
    "ula_steering",
]

DATASET_MAGIC = b"RCFLOWDS" + bytes([0, 0, 0, 0, 0, 0, 0, 1])

PSD_TOL = -1e-12


def _hermitian_sqrt(c: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition (rank-deficient allowed)."""
    w, u = np.linalg.eigh((c + c.conj().T) / 2.0)
    if w.min() < PSD_TOL * max(1.0, abs(w.max())):
        raise ValueError(f"covariance is not PSD: min eigenvalue {w.min():.3e}")
    # zero out eigenvalue noise so rank-deficient covariances stay exactly low rank
    w = np.where(w < 1e-12 * max(w.max(), 0.0), 0.0, w)
    return (u * np.sqrt(w)) @ u.conj().T


@dataclass(frozen=True)
class GaussianChannelModel:
    """Rows of H drawn i.i.d. CN(mean_row, row_cov); row_cov is the N_t x N_t
    transmit-side covariance E[h^H h] for a row vector h."""

    dims: SystemDims
    row_cov: np.ndarray | None = None  # None means identity
    mean: np.ndarray | None = None  # None means zero

    def __post_init__(self):
        if self.row_cov is not None:
            c = as_complex_matrix(self.row_cov, (self.dims.n_t, self.dims.n_t))
            _hermitian_sqrt(c)  # validates Hermitian-PSD
            object.__setattr__(self, "row_cov", c)
        if self.mean is not None:
            object.__setattr__(self, "mean", as_complex_matrix(self.mean, (self.dims.n_r, self.dims.n_t)))

    def effective_row_cov(self) -> np.ndarray:
        return np.eye(self.dims.n_t, dtype=np.complex128) if self.row_cov is None else self.row_cov

    def descriptor(self) -> dict:
        d = {"kind": "gaussian"}
        if self.row_cov is not None:
            d["row_cov"] = _encode_complex(self.row_cov)
        if self.mean is not None:
            d["mean"] = _encode_complex(self.mean)
        return d


@dataclass(frozen=True)
class ClusteredChannelModel:
    """Geometric channel: sum of n_paths rank-one outer products of ULA steering
    vectors with CN(0,1) path gains, so rank(H) <= n_paths exactly."""

    dims: SystemDims
    n_paths: int
    angle_spread: float = np.pi  # radians; per-path offset around a per-sample center

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.angle_spread < 0:
            raise ValueError("angle_spread must be non-negative")

    def descriptor(self) -> dict:
        return {"kind": "clustered", "n_paths": self.n_paths, "angle_spread": self.angle_spread}


@dataclass
class Dataset:
    """A batch of channel realizations plus the descriptor that produced them."""

    n_r: int
    n_t: int
    model: dict = field(default_factory=dict)
    samples: np.ndarray = None  # (count, n_r, n_t) complex128
    normalized: bool = False

    def __post_init__(self):
        if self.samples is None:
            self.samples = np.zeros((0, self.n_r, self.n_t), dtype=np.complex128)
        self.samples = np.asarray(self.samples, dtype=np.complex128)
        if self.samples.ndim != 3 or self.samples.shape[1:] != (self.n_r, self.n_t):
            raise ValueError(f"samples must have shape (count, {self.n_r}, {self.n_t})")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def mean_entry_power(self) -> float:
        if len(self) == 0:
            return float("nan")
        return float(np.mean(np.abs(self.samples) ** 2))


def sample_gaussian(model: GaussianChannelModel, n: int, rng: np.random.Generator) -> Dataset:
    """Draw ``n`` channels with i.i.d. CN(mean_row, row_cov) rows."""
    dims = model.dims
    root = _hermitian_sqrt(model.effective_row_cov())
    xi = complex_gaussian((n * dims.n_r, dims.n_t), 1.0, rng)
    samples = (xi @ root).reshape(n, dims.n_r, dims.n_t)
    if model.mean is not None:
        samples = samples + model.mean[None, :, :]
    return Dataset(dims.n_r, dims.n_t, model.descriptor(), samples, normalized=False)


def ula_steering(n: int, angle: float | np.ndarray) -> np.ndarray:
    """Half-wavelength ULA steering vector(s), unit 2-norm, shape (..., n)."""
    angle = np.asarray(angle, dtype=np.float64)
    k = np.arange(n)
    return np.exp(1j * np.pi * np.sin(angle)[..., None] * k) / np.sqrt(n)


def sample_clustered(model: ClusteredChannelModel, n: int, rng: np.random.Generator,
                     normalize: bool = True) -> Dataset:
    """Draw ``n`` clustered channels; by default globally normalize the batch
    to unit mean entry power.

    Each sample: H = sqrt(n_r n_t / L) * sum_l g_l a_r(theta_l) a_t(phi_l)^H with
    g_l ~ CN(0,1) and per-path angles offset uniformly within ``angle_spread``
    around a per-sample center drawn uniformly in [-pi/2, pi/2]. The raw
    construction has unit mean entry power in expectation already; the global
    normalization pins the batch average exactly.
    """
    dims, L = model.dims, model.n_paths
    gains = complex_gaussian((n, L), 1.0, rng)
    center_r = rng.uniform(-np.pi / 2, np.pi / 2, size=(n, 1))
    center_t = rng.uniform(-np.pi / 2, np.pi / 2, size=(n, 1))
    th = center_r + model.angle_spread * (rng.uniform(size=(n, L)) - 0.5)
    ph = center_t + model.angle_spread * (rng.uniform(size=(n, L)) - 0.5)
    a_r = ula_steering(dims.n_r, th)  # (n, L, n_r)
    a_t = ula_steering(dims.n_t, ph)  # (n, L, n_t)
    scale = np.sqrt(dims.n_r * dims.n_t / L)
    samples = scale * np.einsum("nl,nlr,nlt->nrt", gains, a_r, a_t.conj())
    ds = Dataset(dims.n_r, dims.n_t, model.descriptor(), samples, normalized=False)
    power = ds.mean_entry_power()
    if normalize and power > 0:
        ds.samples = ds.samples / np.sqrt(power)
        ds.normalized = True
    return ds


def sample_dataset(model, n: int, seed: int) -> Dataset:
    """Sample with one independent stream per realization, so generation can be
    split across workers without changing the result."""
    if n < 0:
        raise ValueError("n must be non-negative")
    sampler = sample_gaussian if isinstance(model, GaussianChannelModel) else sample_clustered
    parts = [sampler(model, 1, make_rng(seed, "sample", i)).samples for i in range(n)]
    dims = model.dims
    samples = np.concatenate(parts, axis=0) if parts else np.zeros((0, dims.n_r, dims.n_t), np.complex128)
    ds = Dataset(dims.n_r, dims.n_t, model.descriptor(), samples, normalized=False)
    if isinstance(model, ClusteredChannelModel) and len(ds) > 0:
        ds.samples = ds.samples / np.sqrt(ds.mean_entry_power())
        ds.normalized = True
    return ds


# ---------------------------------------------------------------------------
# dataset file format (see docs/formats.md)
# ---------------------------------------------------------------------------

def _encode_complex(a: np.ndarray) -> list:
    return [a.shape[0], a.shape[1], [[float(x.real), float(x.imag)] for x in a.ravel()]]


def _decode_complex(enc: list) -> np.ndarray:
    rows, cols, entries = enc
    flat = np.array([complex(re, im) for re, im in entries], dtype=np.complex128)
    return flat.reshape(rows, cols)


def save_dataset(ds: Dataset, path) -> None:
    header = {
        "n_r": ds.n_r,
        "n_t": ds.n_t,
        "count": len(ds),
        "normalized": bool(ds.normalized),
        "model": ds.model,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    interleaved = np.empty((len(ds), ds.n_r, ds.n_t, 2), dtype="<f8")
    interleaved[..., 0] = ds.samples.real
    interleaved[..., 1] = ds.samples.imag
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        f.write(interleaved.tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        magic = f.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise ValueError(f"{path}: bad dataset magic {magic!r}")
        (header_len,) = struct.unpack("<I", _read_exact(f, 4, "header length"))
        header = json.loads(_read_exact(f, header_len, "header").decode("utf-8"))
        n_r, n_t, count = header["n_r"], header["n_t"], header["count"]
        payload = _read_exact(f, count * n_r * n_t * 16, "sample payload")
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after sample payload")
    flat = np.frombuffer(payload, dtype="<f8").reshape(count, n_r, n_t, 2)
    samples = (flat[..., 0] + 1j * flat[..., 1]).astype(np.complex128)
    return Dataset(n_r, n_t, header.get("model", {}), samples, normalized=header["normalized"])


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"truncated dataset file: expected {n} bytes of {what}, got {len(data)}")
    return data
