"""Pilot generation, the forward model Y = HP + N, and SNR conventions."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import SystemDims, as_complex_matrix, complex_gaussian

__all__ = [
    "QPSK_PHASES",
    "generate_pilots",
    "validate_pilots",
    "Measurement",
    "observe",
    "SnrConvention",
    "snr_to_sigma",
]

# unit-modulus QPSK constellation: phases pi/4, 3pi/4, 5pi/4, 7pi/4
QPSK_PHASES = np.pi / 4 + np.pi / 2 * np.arange(4)
_QPSK_SYMBOLS = np.exp(1j * QPSK_PHASES)


def generate_pilots(dims: SystemDims, rng: np.random.Generator) -> np.ndarray:
    """Random QPSK pilot matrix of shape (n_t, n_p); drawn once per experiment
    seed and reused for every sample."""
    idx = rng.integers(0, 4, size=(dims.n_t, dims.n_p))
    return _QPSK_SYMBOLS[idx]


def validate_pilots(p: np.ndarray) -> np.ndarray:
    p = as_complex_matrix(p)
    if np.max(np.abs(np.abs(p) - 1.0)) > 1e-12:
        raise ValueError("pilot entries must have unit modulus")
    phases = np.mod(np.angle(p), 2 * np.pi)
    dist = np.min(np.abs(phases[..., None] - QPSK_PHASES[None, None, :]), axis=-1)
    if np.max(dist) > 1e-12:
        raise ValueError("pilot phases must lie on the QPSK grid {pi/4, 3pi/4, 5pi/4, 7pi/4}")
    return p


@dataclass(frozen=True)
class Measurement:
    """Observation Y (n_r x n_p), the pilots that produced it, and the
    per-entry complex noise standard deviation."""

    y: np.ndarray
    pilots: np.ndarray
    sigma_pilot: float

    def __post_init__(self):
        y = as_complex_matrix(self.y)
        p = as_complex_matrix(self.pilots)
        if y.shape[1] != p.shape[1]:
            raise ValueError(f"Y has {y.shape[1]} pilot columns but P has {p.shape[1]}")
        if self.sigma_pilot < 0:
            raise ValueError("sigma_pilot must be non-negative")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "pilots", p)

    @property
    def dims(self) -> SystemDims:
        return SystemDims(self.y.shape[0], self.pilots.shape[0], self.pilots.shape[1])


def observe(h: np.ndarray, pilots: np.ndarray, sigma_pilot: float, rng: np.random.Generator) -> Measurement:
    """Forward model Y = HP + N with N i.i.d. CN(0, sigma_pilot^2) per entry."""
    h = as_complex_matrix(h)
    p = as_complex_matrix(pilots)
    if h.shape[1] != p.shape[0]:
        raise ValueError(f"H has {h.shape[1]} columns but P has {p.shape[0]} rows")
    if sigma_pilot < 0:
        raise ValueError("sigma_pilot must be non-negative")
    y = h @ p
    if sigma_pilot > 0:
        y = y + complex_gaussian(y.shape, sigma_pilot**2, rng)
    return Measurement(y=y, pilots=p, sigma_pilot=float(sigma_pilot))


class SnrConvention(enum.Enum):
    """Where the SNR is defined.

    CHANNEL_DOMAIN: noise added directly to a unit-power H, sigma^2 = 10^(-SNR/10).
    PILOT_DOMAIN: noise added to Y = HP; with unit-modulus pilots and unit-power H
    the per-receive-entry signal power is n_t, so sigma_pilot^2 = n_t * 10^(-SNR/10).
    """

    CHANNEL_DOMAIN = "channel"
    PILOT_DOMAIN = "pilot"


def snr_to_sigma(snr_db: float, convention: SnrConvention, n_t: int | None = None) -> float:
    """Noise standard deviation for a target SNR under the given convention."""
    convention = SnrConvention(convention)
    base = 10.0 ** (-float(snr_db) / 20.0)
    if convention is SnrConvention.CHANNEL_DOMAIN:
        return base
    if n_t is None:
        raise ValueError("pilot-domain SNR requires n_t")
    return float(np.sqrt(n_t) * base)
