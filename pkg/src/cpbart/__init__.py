"""Distributional regression with a BART-implied Gaussian copula process."""

from .hmc import CStats, HMCConfig
from .marginal import DegenerateSampleError, MarginalModel, fit_kde
from .metrics import ScoreReport, cross_validate
from .predict import (
    PredictionConfig,
    default_y_grid,
    density_posterior_band,
    predictive_density,
    predictive_density_at,
    predictive_mean,
    predictive_quantile,
    predictive_quantiles,
    quantile_posterior_interval,
    quantile_posterior_intervals,
)
from .sampler import FitResult, PosteriorDraw, fit_cpbart, fit_gaussian_bart
from .sim import SimSpec, gen_case, monte_carlo_snr
from .tree_mcmc import SamplerConfig
from .trees import Dataset, Ensemble, Tree

__version__ = "0.1.0"

__all__ = [
    "CStats",
    "Dataset",
    "DegenerateSampleError",
    "Ensemble",
    "FitResult",
    "HMCConfig",
    "MarginalModel",
    "PosteriorDraw",
    "PredictionConfig",
    "SamplerConfig",
    "ScoreReport",
    "SimSpec",
    "Tree",
    "cross_validate",
    "default_y_grid",
    "density_posterior_band",
    "fit_cpbart",
    "fit_gaussian_bart",
    "fit_kde",
    "gen_case",
    "monte_carlo_snr",
    "predictive_density",
    "predictive_density_at",
    "predictive_mean",
    "predictive_quantile",
    "predictive_quantiles",
    "quantile_posterior_interval",
    "quantile_posterior_intervals",
]
