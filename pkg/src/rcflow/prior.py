"""Velocity-field priors.

A velocity field maps a state H and a time t in [0, 1] to the direction
V(H, t) such that H - t*V is the field's estimate of the clean channel. Two
implementations exist: the closed-form field for Gaussian channel rows
(:class:`GaussianAnalyticField`, exact and fast, used as the verification
oracle) and a loaded network graph (:class:`rcflow.network.NetworkField`).
"""

from __future__ import annotations

from typing import Protocol, runtime_checkable

import numpy as np

from .core import as_complex_matrix, hermitian_evd

__all__ = ["VelocityField", "GaussianAnalyticField"]


@runtime_checkable
class VelocityField(Protocol):
    def eval(self, h: np.ndarray, t: float) -> np.ndarray:
        """Velocity at state ``h`` and time ``t``; same shape as ``h``."""
        ...


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return t


class GaussianAnalyticField:
    """Exact marginal velocity field for channels with i.i.d. CN(mean_row, row_cov) rows.

    For clean rows h0 ~ CN(mu, C) corrupted along the linear path
    h_t = h0 + t*n with n ~ CN(0, sigma_fm^2 I), the conditional mean of the
    path velocity is

        v(h, t) = t * sigma_fm^2 * (h - mu) (C + t^2 sigma_fm^2 I)^{-1}

    applied row-wise, so the implied denoiser h - t*v is the exact Gaussian
    MMSE denoiser. The inverse is applied through a cached eigendecomposition
    of C.
    """

    def __init__(self, n_t: int, mean: np.ndarray | None = None,
                 row_cov: np.ndarray | None = None, sigma_fm: float = 1.0):
        if sigma_fm <= 0:
            raise ValueError("sigma_fm must be positive")
        self.n_t = int(n_t)
        self.sigma_fm = float(sigma_fm)
        self.mean = None if mean is None else as_complex_matrix(mean)
        if row_cov is None:
            self._isotropic = True
            self._u = None
            self._eigs = np.ones(self.n_t)
            self.row_cov = np.eye(self.n_t, dtype=np.complex128)
        else:
            self.row_cov = as_complex_matrix(row_cov, (self.n_t, self.n_t))
            self._u, self._eigs = hermitian_evd(self.row_cov)
            if self._eigs.min() < -1e-12 * max(1.0, self._eigs.max()):
                raise ValueError("row_cov must be PSD")
            self._isotropic = bool(np.allclose(self.row_cov, np.eye(self.n_t), atol=1e-14))

    def eval(self, h: np.ndarray, t: float) -> np.ndarray:
        t = _check_t(t)
        h = as_complex_matrix(h)
        if h.shape[1] != self.n_t:
            raise ValueError(f"state has {h.shape[1]} columns, field expects {self.n_t}")
        centered = h if self.mean is None else h - self.mean
        s2 = self.sigma_fm**2
        if self._isotropic:
            return (t * s2 / (1.0 + t * t * s2)) * centered
        gains = t * s2 / (self._eigs + t * t * s2)
        return (centered @ self._u) * gains @ self._u.conj().T

    def denoiser_gain(self, t: float) -> np.ndarray:
        """Eigenvalues of the implied denoiser's Jacobian, C/(C + t^2 sigma_fm^2)."""
        t = _check_t(t)
        return self._eigs / (self._eigs + t * t * self.sigma_fm**2)
