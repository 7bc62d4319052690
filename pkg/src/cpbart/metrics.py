"""Forecast evaluation metrics and the k-fold cross-validation driver.

Folds may run in parallel worker processes (CPBART_THREADS environment
variable); every fold carries its own derived seed, so results are
identical whatever the worker count.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import predict
from .sampler import fit_cpbart, fit_gaussian_bart
from .tree_mcmc import SamplerConfig
from .trees import Dataset

__all__ = [
    "ScoreReport",
    "crps_from_quantiles",
    "cross_validate",
    "default_crps_levels",
    "mean_log_score",
    "pinball",
    "qrmse",
    "quantile_coverage",
    "rmse",
]

DENSITY_FLOOR = 1e-300


@dataclass
class ScoreReport:
    """Flat bundle of the evaluation metrics for one test set."""

    rmse: float
    log_score: float
    crps: float
    n_test: int
    qrmse: dict[float, float] = field(default_factory=dict)
    coverage: dict[float, float] = field(default_factory=dict)
    pinball: dict[float, float] = field(default_factory=dict)
    n_floored: int = 0

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [
            ("rmse", self.rmse),
            ("log_score", self.log_score),
            ("crps", self.crps),
            ("n_test", float(self.n_test)),
            ("n_floored", float(self.n_floored)),
        ]
        rows += [(f"qrmse_{a:g}", v) for a, v in sorted(self.qrmse.items())]
        rows += [(f"coverage_{a:g}", v) for a, v in sorted(self.coverage.items())]
        rows += [(f"pinball_{a:g}", v) for a, v in sorted(self.pinball.items())]
        return rows


def rmse(predictions, truths) -> float:
    """Root mean squared error."""
    predictions = np.asarray(predictions, dtype=float)
    truths = np.asarray(truths, dtype=float)
    if predictions.shape != truths.shape:
        raise ValueError("length mismatch")
    return float(np.sqrt(np.mean((predictions - truths) ** 2)))


def mean_log_score(density_values) -> float:
    """Negative mean log predictive density; lower is better.

    Zero densities are floored at 1e-300; a warning reports how many points
    were floored.
    """
    dens = np.asarray(density_values, dtype=float)
    floored = int(np.count_nonzero(dens < DENSITY_FLOOR))
    if floored:
        warnings.warn(f"floored {floored} zero predictive densities")
    return float(-np.mean(np.log(np.maximum(dens, DENSITY_FLOOR))))


def qrmse(pred_quantiles, true_quantiles, alpha: float) -> float:
    """RMSE between estimated and oracle conditional quantiles at one level."""
    del alpha  # level is carried by the caller's bookkeeping
    return rmse(pred_quantiles, true_quantiles)


def pinball(y, q_hat, alpha: float) -> float:
    """Mean pinball loss (1{y < q} - alpha) (q - y) at quantile level alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("quantile level out of range")
    y = np.asarray(y, dtype=float)
    q_hat = np.asarray(q_hat, dtype=float)
    if y.shape != q_hat.shape:
        raise ValueError("length mismatch")
    return float(np.mean(((y < q_hat).astype(float) - alpha) * (q_hat - y)))


def default_crps_levels(count: int = 99) -> np.ndarray:
    return np.arange(1, count + 1) / (count + 1.0)


def crps_from_quantiles(y, quantile_function, levels_grid=None) -> float:
    """CRPS as twice the trapezoid integral of the pinball loss over levels.

    ``quantile_function(alpha)`` must return the predicted quantiles for all
    observations at once.
    """
    y = np.asarray(y, dtype=float)
    levels = (
        default_crps_levels() if levels_grid is None else np.asarray(levels_grid)
    )
    if np.any(levels <= 0.0) or np.any(levels >= 1.0) or np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing inside (0, 1)")
    losses = np.array([pinball(y, quantile_function(a), a) for a in levels])
    return float(2.0 * np.trapezoid(losses, levels))


def quantile_coverage(intervals, true_quantiles) -> float:
    """Fraction of oracle quantiles inside their [lo, hi] intervals."""
    lo, hi = (np.asarray(b, dtype=float) for b in intervals)
    truth = np.asarray(true_quantiles, dtype=float)
    if lo.shape != truth.shape or hi.shape != truth.shape:
        raise ValueError("length mismatch")
    return float(np.mean((truth >= lo) & (truth <= hi)))


_FITTERS = {"cpbart": fit_cpbart, "baseline": fit_gaussian_bart}


def _fold_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def _run_fold(job):
    """Fit on the fold complement and score the held-out rows (picklable)."""
    raw_X, y, columns, test_idx, config, method, levels = job
    train_mask = np.ones(y.size, dtype=bool)
    train_mask[test_idx] = False
    train = Dataset.from_raw(raw_X[train_mask], y[train_mask], columns=columns)
    fit = _FITTERS[method](train, config)
    X_test = train.transform(raw_X[test_idx])
    fold_means = predict.predictive_mean(fit, X_test, mode="plugin")
    fold_dens = predict.predictive_density_at(fit, X_test, y[test_idx])
    fold_quants = predict.predictive_quantiles(fit, X_test, levels)
    return test_idx, fold_means, fold_dens, fold_quants


def cross_validate(
    data: Dataset,
    k: int = 10,
    method: str = "cpbart",
    config: SamplerConfig | None = None,
    seed: int = 0,
    quantile_levels=(0.25, 0.5, 0.75),
    crps_levels=None,
) -> ScoreReport:
    """k-fold cross-validation of a fitting method on a dataset.

    Folds are disjoint and cover every observation; the marginal, covariate
    scaling and all model structure are refit on each training complement.
    Metrics are pooled over the concatenated out-of-fold predictions.
    """
    if data.n < k:
        raise ValueError("need at least k observations")
    if method not in _FITTERS:
        raise ValueError(f"unknown method: {method}")
    base_config = config if config is not None else SamplerConfig()
    crps_levels = (
        default_crps_levels() if crps_levels is None else np.asarray(crps_levels)
    )
    rng = np.random.default_rng(seed)
    folds = _fold_indices(data.n, k, rng)
    raw_X = data.X * (data.scaling[:, 1] - data.scaling[:, 0]) + data.scaling[:, 0]

    all_levels = np.unique(np.concatenate([crps_levels, np.asarray(quantile_levels)]))
    n = data.n
    means = np.empty(n)
    dens = np.empty(n)
    quants = np.empty((n, all_levels.size))
    fold_seeds = np.random.SeedSequence(seed).generate_state(k)

    jobs = [
        (
            raw_X,
            data.y,
            data.columns,
            test_idx,
            replace(base_config, seed=int(fold_seeds[fold])),
            method,
            all_levels,
        )
        for fold, test_idx in enumerate(folds)
    ]
    workers = int(os.environ.get("CPBART_THREADS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(job) for job in jobs]
    for test_idx, fold_means, fold_dens, fold_quants in results:
        means[test_idx] = fold_means
        dens[test_idx] = fold_dens
        quants[test_idx, :] = fold_quants

    level_col = {float(a): j for j, a in enumerate(all_levels)}

    def quantile_fn(alpha):
        return quants[:, level_col[float(alpha)]]

    report = ScoreReport(
        rmse=rmse(means, data.y),
        log_score=mean_log_score(dens),
        crps=crps_from_quantiles(data.y, quantile_fn, crps_levels),
        n_test=n,
        n_floored=int(np.count_nonzero(dens < DENSITY_FLOOR)),
    )
    for a in quantile_levels:
        report.pinball[float(a)] = pinball(data.y, quantile_fn(a), float(a))
    return report
