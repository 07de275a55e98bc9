"""Classical estimators: LMMSE (exact posterior mean under the Gaussian row
model) and the minimum-norm least-squares fit."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import as_complex_matrix
from .measurement import Measurement

__all__ = ["LmmseContext", "lmmse", "least_squares", "sample_row_covariance"]

COND_WARN_THRESHOLD = 1e12


@dataclass(frozen=True)
class LmmseContext:
    """Precomputed filter F = (P^H R_H P + s^2 I)^-1 P^H R_H; the estimate is Y F."""

    r_h: np.ndarray
    factor: np.ndarray
    cond: float

    @classmethod
    def from_measurement(cls, meas: Measurement, r_h: np.ndarray) -> "LmmseContext":
        p = meas.pilots
        r_h = as_complex_matrix(r_h, (p.shape[0], p.shape[0]))
        inner = p.conj().T @ r_h @ p + meas.sigma_pilot**2 * np.eye(p.shape[1])
        cond = float(np.linalg.cond(inner))
        if cond > COND_WARN_THRESHOLD:
            warnings.warn(f"LMMSE inner matrix is ill-conditioned (cond = {cond:.3e})", stacklevel=2)
        factor = np.linalg.solve(inner, p.conj().T @ r_h)
        return cls(r_h=r_h, factor=factor, cond=cond)

    def apply(self, y: np.ndarray) -> np.ndarray:
        return as_complex_matrix(y) @ self.factor


def lmmse(meas: Measurement, r_h: np.ndarray) -> np.ndarray:
    """LMMSE estimate Y (P^H R_H P + s^2 I)^-1 P^H R_H.

    For rows of H i.i.d. CN(0, R_H) and white pilot noise this is the exact
    posterior mean, which makes it the oracle for Gaussian-model tests.
    """
    return LmmseContext.from_measurement(meas, r_h).apply(meas.y)


def least_squares(meas: Measurement) -> np.ndarray:
    """Minimum-Frobenius-norm minimizer of ||Y - HP||_F via the pseudo-inverse."""
    return meas.y @ np.linalg.pinv(meas.pilots)


def sample_row_covariance(samples: np.ndarray) -> np.ndarray:
    """Empirical transmit-side covariance E[h^H h] over all rows of a sample set.

    Accepts an array of shape (count, n_r, n_t); used to feed LMMSE when no
    analytic covariance is available (e.g. clustered channels).
    """
    samples = np.asarray(samples, dtype=np.complex128)
    rows = samples.reshape(-1, samples.shape[-1])
    return rows.conj().T @ rows / rows.shape[0]
