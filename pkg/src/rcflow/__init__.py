"""Recursive flow-matching solver for under-determined MIMO channel estimation."""

__version__ = "0.1.0"

from .core import SystemDims, complex_gaussian, hermitian_evd, make_rng
from .measurement import Measurement, SnrConvention, generate_pilots, observe, snr_to_sigma
from .prior import GaussianAnalyticField, VelocityField
from .solver import (
    ADAPTIVE,
    Estimate,
    ProjectionContext,
    SolverConfig,
    SolverTrace,
    adaptive_inner_steps,
    anneal_weight,
    denoise,
    precompute_projection,
    proximal_project,
    rectify,
    run,
    schedule_t,
    schedule_t_prime,
)
from .analysis import nmse_db, partition_of_unity, rho_p_analytic, spectral_radius_fd
from .baselines import least_squares, lmmse
from .network import NetworkField, load_network

__all__ = [
    "__version__",
    "SystemDims", "complex_gaussian", "hermitian_evd", "make_rng",
    "Measurement", "SnrConvention", "generate_pilots", "observe", "snr_to_sigma",
    "GaussianAnalyticField", "VelocityField", "NetworkField", "load_network",
    "ADAPTIVE", "Estimate", "ProjectionContext", "SolverConfig", "SolverTrace",
    "adaptive_inner_steps", "anneal_weight", "denoise", "precompute_projection",
    "proximal_project", "rectify", "run", "schedule_t", "schedule_t_prime",
    "nmse_db", "partition_of_unity", "rho_p_analytic", "spectral_radius_fd",
    "least_squares", "lmmse",
]
