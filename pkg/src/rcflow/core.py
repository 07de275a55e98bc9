"""Shared domain types and the minimal complex linear algebra the solver needs.

All matrices are dense ``numpy.complex128`` arrays in row-major order. Every
public operation validates its inputs and returns freshly allocated arrays, so
values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SystemDims",
    "make_rng",
    "as_complex_matrix",
    "hermitian_evd",
    "complex_gaussian",
]

HERMITIAN_RTOL = 1e-10


@dataclass(frozen=True)
class SystemDims:
    """Antenna/pilot geometry: ``n_r`` receive, ``n_t`` transmit, ``n_p`` pilots."""

    n_r: int
    n_t: int
    n_p: int

    def __post_init__(self):
        for name in ("n_r", "n_t", "n_p"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")

    @property
    def alpha(self) -> float:
        """Pilot density n_p / n_t; values below 1 make Y = HP + N under-determined."""
        return self.n_p / self.n_t


def make_rng(seed: int, *stream: object) -> np.random.Generator:
    """Deterministic random stream derived from ``seed`` and an optional stream path.

    Uses the counter-based Philox bit generator keyed through a
    ``numpy.random.SeedSequence``, so every (seed, path) pair yields the same
    bit stream on every platform. Strings in the path are hashed to stable
    integers before keying.
    """
    entropy: list[int] = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for part in stream:
        if isinstance(part, str):
            # stable 64-bit label hash (FNV-1a); hash() is salted per process
            acc = 0xCBF29CE484222325
            for b in part.encode():
                acc = ((acc ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
            entropy.append(acc)
        else:
            entropy.append(int(part) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_complex_matrix(a, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D complex128 array."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"expected shape {tuple(shape)}, got {m.shape}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise ValueError("matrix contains NaN or Inf entries")
    return m


def hermitian_evd(m: np.ndarray, rtol: float = HERMITIAN_RTOL) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition M = U diag(w) U^H of a Hermitian matrix.

    Returns the unitary ``u`` and real eigenvalues ``w`` sorted descending.
    Raises ``ValueError`` for non-square input or when the Hermitian defect
    ``||M - M^H||_F`` exceeds ``rtol * ||M||_F``.
    """
    m = as_complex_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"hermitian_evd requires a square matrix, got {m.shape}")
    defect = np.linalg.norm(m - m.conj().T)
    scale = np.linalg.norm(m)
    if defect > rtol * max(scale, 1e-300):
        raise ValueError(f"matrix is not Hermitian: ||M - M^H|| = {defect:.3e} vs ||M|| = {scale:.3e}")
    w, u = np.linalg.eigh((m + m.conj().T) / 2.0)
    order = np.argsort(w)[::-1]
    return u[:, order], w[order]


def complex_gaussian(shape: tuple[int, int], variance: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. circularly-symmetric complex Gaussian matrix, E|x|^2 = variance."""
    if variance <= 0:
        raise ValueError(f"variance must be positive, got {variance}")
    scale = np.sqrt(variance / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) * scale
