"""Geometric multivariate extremes with radial generalized Pareto models.

Data are standardized to Laplace margins, a quantile set is fitted by gamma
quantile regression, and radial exceedances are modelled through a limit set
gauge. Posterior draws feed rare-event probabilities, return sets,
resampling and point-pattern diagnostics.
"""
from __future__ import annotations

from .geometry import DirectionGrid, DomainError, RadialFunction, Sample, StarBody, default_grid, volume
from .copulas import CopulaSpec, sample, true_coeffs, true_dir_density, true_gauge
from .margins import MarginSet, fit_margins
from .quantreg import QuantileSetFit, exceedance_split, fit_quantile_set, posterior_quantile_sets
from .exceedance import ExceedanceFit, ExceedanceModelSpec, fit_exceedance, homothety_check
from .probsets import GeometricModelDraw, isotropic_set, return_set
from .rareprob import chi_estimate, extremal_coefficients, prob_given_draw, prob_posterior, region_from_box
from .diagnostics import ball_transform, envelope, k_function
from .sampling import ResamplePlan, hybrid_resample, sample_rgp

__version__ = "0.1.0"

__all__ = [
    "DirectionGrid",
    "DomainError",
    "RadialFunction",
    "Sample",
    "StarBody",
    "default_grid",
    "volume",
    "CopulaSpec",
    "sample",
    "true_coeffs",
    "true_dir_density",
    "true_gauge",
    "MarginSet",
    "fit_margins",
    "QuantileSetFit",
    "exceedance_split",
    "fit_quantile_set",
    "posterior_quantile_sets",
    "ExceedanceFit",
    "ExceedanceModelSpec",
    "fit_exceedance",
    "homothety_check",
    "GeometricModelDraw",
    "isotropic_set",
    "return_set",
    "chi_estimate",
    "extremal_coefficients",
    "prob_given_draw",
    "prob_posterior",
    "region_from_box",
    "ball_transform",
    "envelope",
    "k_function",
    "ResamplePlan",
    "hybrid_resample",
    "sample_rgp",
]
