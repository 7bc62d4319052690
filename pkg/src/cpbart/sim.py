"""Synthetic data generators for the simulation benchmark.

Three response regimes over mildly correlated covariates pushed through the
five-dimensional Friedman function: additive Gaussian noise, a monotone
gamma transform of a latent Gaussian regression, and a gamma response with
covariate-dependent shape. Each generator also returns a closed-form oracle
for the true conditional quantiles and densities, defined on the
standardized covariate scale of the generated sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import gammaincinv, ndtr, ndtri

from .trees import Dataset

__all__ = [
    "CaseOracle",
    "SimSpec",
    "friedman",
    "friedman_star",
    "gen_case",
    "gen_covariates",
    "monte_carlo_snr",
]

SCALE_CASE1 = 2.0787  # noise variance, additive Gaussian case
SCALE_CASE2 = 1.6  # latent noise variance, gamma-transform case
SCALE_CASE3 = 0.2601  # squared gamma scale, covariate-shape case

_FRIEDMAN_CENTER = 15.0
_FRIEDMAN_NORM = 2.0 * math.sqrt(5.5)
_GH_NODES = 64


@dataclass(frozen=True)
class SimSpec:
    case: int
    n: int
    rho: float = 0.3
    seed: int = 0
    gamma_mode: str = "scale"  # second gamma parameter: "scale" | "rate"

    def __post_init__(self):
        if self.case not in (1, 2, 3):
            raise ValueError(f"unknown simulation case: {self.case}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not abs(self.rho) < 1.0:
            raise ValueError("rho must lie in (-1, 1)")
        if self.gamma_mode not in ("scale", "rate"):
            raise ValueError("gamma_mode must be 'scale' or 'rate'")


def friedman(x) -> np.ndarray | float:
    """10 sin(pi x1 x2) + 20 (x3 - 1/2)^2 + 10 x4 + 5 x5 on the unit cube."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = (
        10.0 * np.sin(np.pi * pts[:, 0] * pts[:, 1])
        + 20.0 * (pts[:, 2] - 0.5) ** 2
        + 10.0 * pts[:, 3]
        + 5.0 * pts[:, 4]
    )
    return float(out[0]) if single else out


def friedman_star(x) -> np.ndarray | float:
    """Friedman function centred at 15 and scaled by twice sqrt(5.5)."""
    f = friedman(x)
    return (f - _FRIEDMAN_CENTER) / _FRIEDMAN_NORM


def _latent_gaussian(n: int, rho: float, rng) -> np.ndarray:
    """Correlated Gaussian draws with Toeplitz covariance rho**|l - j|."""
    cov = rho ** np.abs(np.subtract.outer(np.arange(5), np.arange(5)))
    return rng.standard_normal((n, 5)) @ np.linalg.cholesky(cov).T


def gen_covariates(n: int, rho: float, rng) -> np.ndarray:
    """Correlated Gaussian covariates standardized to lie in [0, 1]^5.

    Each coordinate is mapped through its (unit-variance) Gaussian CDF,
    giving uniform marginals that preserve the latent rank dependence, and
    the per-column min-max top-up pins the sample extremes to exactly 0
    and 1.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    u = ndtr(_latent_gaussian(n, rho, rng))
    lo = u.min(axis=0)
    hi = u.max(axis=0)
    return (u - lo) / (hi - lo)


def _gamma_scale_arg(r, mode: str) -> float:
    return r if mode == "scale" else 1.0 / r


@dataclass(frozen=True)
class CaseOracle:
    """True conditional quantile/density/moments of a simulated case.

    All callables take covariates on the standardized scale of the sample
    the oracle was generated with.
    """

    case: int
    gamma_mode: str = "scale"

    def quantile(self, X, alpha: float) -> np.ndarray:
        f_star = np.atleast_1d(friedman_star(X))
        zq = ndtri(alpha)
        if self.case == 1:
            return f_star + math.sqrt(SCALE_CASE1) * zq
        if self.case == 2:
            z = f_star + math.sqrt(SCALE_CASE2) * zq
            u = np.clip(ndtr(z), 1e-16, 1.0 - 1e-16)
            return gammaincinv(3.0, u) * _gamma_scale_arg(2.0, self.gamma_mode)
        shape = np.atleast_1d(friedman(X)) / math.sqrt(5.5)
        scale = _gamma_scale_arg(math.sqrt(SCALE_CASE3), self.gamma_mode)
        return gammaincinv(shape, alpha) * scale

    def density(self, X, y) -> np.ndarray:
        f_star = np.atleast_1d(friedman_star(X))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.case == 1:
            r = math.sqrt(SCALE_CASE1)
            return np.exp(-0.5 * ((y - f_star) / r) ** 2) / (r * math.sqrt(2 * np.pi))
        if self.case == 2:
            r = math.sqrt(SCALE_CASE2)
            sc = _gamma_scale_arg(2.0, self.gamma_mode)
            u = np.clip(stats.gamma.cdf(y, 3.0, scale=sc), 1e-300, 1 - 1e-16)
            z = ndtri(u)
            g = stats.gamma.pdf(y, 3.0, scale=sc)
            phi_z = np.exp(-0.5 * z * z) / math.sqrt(2 * np.pi)
            lat = np.exp(-0.5 * ((z - f_star) / r) ** 2) / (r * math.sqrt(2 * np.pi))
            return np.where(g > 0.0, lat * g / phi_z, 0.0)
        shape = np.atleast_1d(friedman(X)) / math.sqrt(5.5)
        scale = _gamma_scale_arg(math.sqrt(SCALE_CASE3), self.gamma_mode)
        return stats.gamma.pdf(y, shape, scale=scale)

    def mean_var(self, X) -> tuple[np.ndarray, np.ndarray]:
        f_star = np.atleast_1d(friedman_star(X))
        if self.case == 1:
            return f_star, np.full(f_star.shape, SCALE_CASE1)
        if self.case == 2:
            r = math.sqrt(SCALE_CASE2)
            nodes, weights = np.polynomial.hermite.hermgauss(_GH_NODES)
            eps = math.sqrt(2.0) * nodes  # standard-normal nodes
            w = weights / math.sqrt(math.pi)
            sc = _gamma_scale_arg(2.0, self.gamma_mode)
            z = f_star[:, None] + r * eps[None, :]
            u = np.clip(ndtr(z), 1e-16, 1.0 - 1e-16)
            yv = gammaincinv(3.0, u) * sc
            mean = yv @ w
            var = (yv * yv) @ w - mean * mean
            return mean, var
        shape = np.atleast_1d(friedman(X)) / math.sqrt(5.5)
        if self.gamma_mode == "scale":
            scale = math.sqrt(SCALE_CASE3)
            return shape * scale, shape * scale * scale
        rate = math.sqrt(SCALE_CASE3)
        return shape / rate, shape / rate**2


def gen_case(spec: SimSpec) -> tuple[Dataset, CaseOracle]:
    """Generate one dataset and the matching conditional-law oracle."""
    rng = np.random.default_rng(spec.seed)
    X = gen_covariates(spec.n, spec.rho, rng)
    f_star = friedman_star(X)
    if spec.case == 1:
        y = f_star + math.sqrt(SCALE_CASE1) * rng.standard_normal(spec.n)
    elif spec.case == 2:
        z = f_star + math.sqrt(SCALE_CASE2) * rng.standard_normal(spec.n)
        u = np.clip(ndtr(z), 1e-16, 1.0 - 1e-16)
        y = gammaincinv(3.0, u) * _gamma_scale_arg(2.0, spec.gamma_mode)
    else:
        shape = friedman(X) / math.sqrt(5.5)
        u = rng.uniform(size=spec.n)
        y = gammaincinv(shape, u) * _gamma_scale_arg(
            math.sqrt(SCALE_CASE3), spec.gamma_mode
        )
    data = Dataset.from_unit_cube(X, y, columns=[f"x{j+1}" for j in range(5)])
    return data, CaseOracle(case=spec.case, gamma_mode=spec.gamma_mode)


def monte_carlo_snr(
    case: int,
    n_points: int = 100_000,
    seed: int = 0,
    rho: float = 0.3,
    gamma_mode: str = "scale",
) -> float:
    """Signal-to-noise ratio of a case, estimated over a covariate sample.

    Range of the conditional mean divided by the root of the average
    conditional variance.
    """
    rng = np.random.default_rng(seed)
    X = gen_covariates(n_points, rho, rng)
    oracle = CaseOracle(case=case, gamma_mode=gamma_mode)
    mean, var = oracle.mean_var(X)
    return float((mean.max() - mean.min()) / math.sqrt(var.mean()))
