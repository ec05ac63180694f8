"""
Exact-rate numerics for fBm-driven compensated sums and the Euler scheme.

Modules
-------
fbm        exact fBm sampling and the covariance calculus of indicators
constants  mu(k), c_H, Hermite coefficients and the cancellation identity
sums       h^i increments, discrete integrals, compensated and Skorohod-type sums
sde        Euler scheme, reference solutions, fundamental solutions, limit equation
harness    Monte Carlo experiments, rate fits, distribution diagnostics, reports
cli        command-line entry point
"""

__version__ = "0.1.0"

from .constants import c_h, cancellation_sum, hermite_coeff, hermite_poly, mu, mu_table
from .fbm import (
    FbmBatch,
    FbmPath,
    TimeGrid,
    fbm_covariance,
    indicator_inner,
    sample_fbm,
    sample_fbm_batch,
    semiinfinite_inner,
)

__all__ = [
    "FbmBatch",
    "FbmPath",
    "TimeGrid",
    "c_h",
    "cancellation_sum",
    "fbm_covariance",
    "hermite_coeff",
    "hermite_poly",
    "indicator_inner",
    "mu",
    "mu_table",
    "sample_fbm",
    "sample_fbm_batch",
    "semiinfinite_inner",
]
