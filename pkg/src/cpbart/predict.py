"""Posterior predictive density, mean, quantiles and probability intervals.

Full mode averages per-draw quantities over the retained posterior sample;
plug-in mode evaluates once at the posterior means of the standardization
and of the regression fit. Batched evaluation over many test points and
draws is vectorized; repeated marginal-quantile lookups go through a dense
monotone table built once per fit (absolute error well below 1e-6 in
response units), while the public marginal quantile operation itself stays
exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .marginal import CDF_CLIP, std_normal_cdf, std_normal_pdf, std_normal_quantile
from .sampler import FitResult
from .trees import leaf_assignment

__all__ = [
    "PredictionConfig",
    "default_y_grid",
    "density_posterior_band",
    "predictive_density",
    "predictive_density_at",
    "predictive_mean",
    "predictive_quantile",
    "predictive_quantiles",
    "quantile_posterior_interval",
    "quantile_posterior_intervals",
]

_BLOCK_ELEMS = 20_000_000  # bound on draws x points x grid temporaries


@dataclass
class PredictionConfig:
    mode: str = "full"  # "full" | "plugin"
    y_grid: np.ndarray | None = None  # density evaluation points
    u_grid_size: int = 801
    u_bound: float = 8.0
    quantile_levels: tuple[float, ...] = (0.25, 0.5, 0.75)

    def __post_init__(self):
        if self.mode not in ("full", "plugin"):
            raise ValueError("mode must be 'full' or 'plugin'")
        if self.u_bound <= 0.0 or self.u_grid_size < 3:
            raise ValueError("invalid integration grid")
        if self.y_grid is not None and np.any(np.diff(self.y_grid) <= 0):
            raise ValueError("y_grid must be strictly increasing")
        levels = np.asarray(self.quantile_levels, dtype=float)
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise ValueError("quantile level out of range")


class _TransportTable:
    """Dense monotone table of F_Y^{-1}(Phi(t)) for batched evaluation.

    The composition is constant outside |t| > Phi^{-1}(1 - CDF_CLIP) because
    the marginal CDF is clipped, so a bounded grid is exact in the tails up
    to the clipping already present in the exact operation.
    """

    _SIZE = 16385

    def __init__(self, marginal):
        bound = float(-std_normal_quantile(CDF_CLIP)) + 0.05
        self.grid = np.linspace(-bound, bound, self._SIZE)
        u = np.clip(std_normal_cdf(self.grid), CDF_CLIP, 1.0 - CDF_CLIP)
        self.values = marginal.quantile(u)

    def __call__(self, t):
        return np.interp(t, self.grid, self.values)


def _transport(fit: FitResult) -> _TransportTable:
    if fit._transport_cache is None:
        fit._transport_cache = _TransportTable(fit.marginal)
    return fit._transport_cache


def _as_points(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _require_draws(fit: FitResult, minimum: int = 1) -> None:
    if len(fit.draws) < minimum:
        raise ValueError(f"need at least {minimum} posterior draws")


def _fit_matrix(fit: FitResult, X: np.ndarray) -> np.ndarray:
    """Ensemble fit of every draw at every point: shape (draws, points)."""
    out = np.zeros((len(fit.draws), X.shape[0]))
    for k, draw in enumerate(fit.draws):
        ens = draw.ensemble
        acc = out[k]
        for tree, vals in zip(ens.trees, ens.leaf_values):
            acc += vals[leaf_assignment(tree, X)]
    return out


def _draw_scales(fit: FitResult) -> np.ndarray:
    if fit.model == "cp-bart":
        return np.array([d.s for d in fit.draws])
    return np.sqrt(np.array([d.sigma2 for d in fit.draws]))


def default_y_grid(fit: FitResult, size: int = 512) -> np.ndarray:
    """Equally spaced grid spanning the training response plus 3 bandwidths."""
    if fit.model == "cp-bart":
        pad = 3.0 * fit.marginal.bandwidth
    else:
        pad = 0.05 * fit.response_range
    return np.linspace(fit.train_y_lo - pad, fit.train_y_hi + pad, size)


def _density_blocks(fit, f_mat, s_or_sig, z, ratio):
    """Average over draws of the per-draw density, chunked over draws.

    ``z`` and ``ratio`` are grid-shaped arrays broadcastable against
    (points, grid) blocks; for the copula model ratio = p_Y / phi(z), for
    the baseline z holds the scaled grid and ratio the Jacobian factor.
    """
    n_draws, n_pts = f_mat.shape
    grid = z.shape[-1]
    block = max(1, _BLOCK_ELEMS // max(1, n_pts * grid))
    acc = np.zeros((n_pts, grid))
    for start in range(0, n_draws, block):
        stop = min(start + block, n_draws)
        f_b = f_mat[start:stop, :, None]
        s_b = s_or_sig[start:stop, None, None]
        if fit.model == "gaussian-bart":
            t = (z[None, None, :] - f_b) / s_b
            acc += np.sum(std_normal_pdf(t) / s_b * ratio, axis=0)
        else:
            zt = z[None, None, :] / s_b - f_b
            acc += np.sum(std_normal_pdf(zt) * ratio[None, None, :] / s_b, axis=0)
    return acc / n_draws


def predictive_density(fit: FitResult, x, y_grid, mode: str = "full") -> np.ndarray:
    """Posterior predictive density on a response grid.

    Returns shape (len(y_grid),) for a single point or (n_points,
    len(y_grid)) for a batch.
    """
    _require_draws(fit)
    X, single = _as_points(x)
    y_grid = np.asarray(y_grid, dtype=float)
    f_mat = _fit_matrix(fit, X)  # (draws, points)

    if fit.model == "gaussian-bart":
        scaled = (y_grid - fit.response_offset) / fit.response_range
        sig = _draw_scales(fit)
        if mode == "plugin":
            f_mat = f_mat.mean(axis=0, keepdims=True)
            sig = np.array([float(np.sqrt(np.mean(sig**2)))])
        out = _density_blocks(fit, f_mat, sig, scaled, 1.0 / fit.response_range)
        return out[0] if single else out

    z = std_normal_quantile(fit.marginal.cdf(y_grid))
    ratio = fit.marginal.pdf(y_grid) / std_normal_pdf(z)
    s = np.array([d.s for d in fit.draws])
    if mode == "plugin":
        c_bar = float(np.mean([d.c for d in fit.draws]))
        s = np.array([(1.0 + fit.config.m * c_bar) ** -0.5])
        f_mat = f_mat.mean(axis=0, keepdims=True)
    elif mode != "full":
        raise ValueError("mode must be 'full' or 'plugin'")
    out = _density_blocks(fit, f_mat, s, z, ratio)
    return out[0] if single else out


def predictive_density_at(fit: FitResult, x, y, mode: str = "full") -> np.ndarray:
    """Predictive density of each row's own response value.

    ``y`` has one entry per row of ``x``; returns shape (n_points,). This is
    the log-score workhorse and avoids forming a full response grid.
    """
    _require_draws(fit)
    X, single = _as_points(x)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    f_mat = _fit_matrix(fit, X)  # (draws, points)

    if fit.model == "gaussian-bart":
        scaled = (y - fit.response_offset) / fit.response_range
        sig = _draw_scales(fit)
        if mode == "plugin":
            f_mat = f_mat.mean(axis=0, keepdims=True)
            sig = np.array([float(np.sqrt(np.mean(sig**2)))])
        t = (scaled[None, :] - f_mat) / sig[:, None]
        dens = std_normal_pdf(t) / sig[:, None] / fit.response_range
        out = dens.mean(axis=0)
        return out[0] if single else out

    z = std_normal_quantile(fit.marginal.cdf(y))
    ratio = fit.marginal.pdf(y) / std_normal_pdf(z)
    s = np.array([d.s for d in fit.draws])
    if mode == "plugin":
        c_bar = float(np.mean([d.c for d in fit.draws]))
        s = np.array([(1.0 + fit.config.m * c_bar) ** -0.5])
        f_mat = f_mat.mean(axis=0, keepdims=True)
    elif mode != "full":
        raise ValueError("mode must be 'full' or 'plugin'")
    zt = z[None, :] / s[:, None] - f_mat
    dens = std_normal_pdf(zt) * ratio[None, :] / s[:, None]
    out = dens.mean(axis=0)
    return out[0] if single else out


def predictive_mean(
    fit: FitResult,
    x,
    mode: str = "full",
    u_grid_size: int = 801,
    u_bound: float = 8.0,
) -> float | np.ndarray:
    """Posterior predictive mean.

    For the copula model the per-draw mean is the quadrature
    integral of F_Y^{-1}(Phi(s (u + f(x)))) phi(u) du over
    [-u_bound, u_bound] (trapezoid); full mode averages it over draws.
    """
    _require_draws(fit)
    X, single = _as_points(x)
    f_mat = _fit_matrix(fit, X)

    if fit.model == "gaussian-bart":
        f_bar = f_mat.mean(axis=0)
        out = f_bar * fit.response_range + fit.response_offset
        return float(out[0]) if single else out

    s = np.array([d.s for d in fit.draws])
    if mode == "plugin":
        c_bar = float(np.mean([d.c for d in fit.draws]))
        s = np.array([(1.0 + fit.config.m * c_bar) ** -0.5])
        f_mat = f_mat.mean(axis=0, keepdims=True)
    elif mode != "full":
        raise ValueError("mode must be 'full' or 'plugin'")
    table = _transport(fit)
    u = np.linspace(-u_bound, u_bound, u_grid_size)
    w = std_normal_pdf(u)
    w_norm = np.trapezoid(w, u)
    n_draws, n_pts = f_mat.shape
    block = max(1, _BLOCK_ELEMS // max(1, n_pts * u_grid_size))
    acc = np.zeros(n_pts)
    for start in range(0, n_draws, block):
        stop = min(start + block, n_draws)
        # argument s_k (u_g + f_ki): (block, points, grid)
        arg = s[start:stop, None, None] * (u[None, None, :] + f_mat[start:stop, :, None])
        vals = table(arg)
        acc += np.trapezoid(vals * w[None, None, :], u, axis=2).sum(axis=0)
    out = acc / n_draws / w_norm
    return float(out[0]) if single else out


def _per_draw_quantiles(
    fit: FitResult, X: np.ndarray, alpha: float, f_mat: np.ndarray | None = None
) -> np.ndarray:
    """Quantile of each draw's predictive law at each point: (draws, points)."""
    if f_mat is None:
        f_mat = _fit_matrix(fit, X)
    zq = float(std_normal_quantile(alpha))
    if fit.model == "gaussian-bart":
        sig = _draw_scales(fit)
        scaled_q = f_mat + sig[:, None] * zq
        return scaled_q * fit.response_range + fit.response_offset
    s = np.array([d.s for d in fit.draws])
    table = _transport(fit)
    return table(s[:, None] * (f_mat + zq))


def predictive_quantiles(
    fit: FitResult, x, alphas, mode: str = "full"
) -> np.ndarray:
    """Predictive quantiles at several levels at once: shape (points, levels).

    Shares one pass over the posterior draws across all levels, so it is the
    preferred entry point for pinball/CRPS grids.
    """
    _require_draws(fit)
    if mode not in ("full", "plugin"):
        raise ValueError("mode must be 'full' or 'plugin'")
    X, _ = _as_points(x)
    alphas = np.asarray(alphas, dtype=float)
    if np.any(alphas <= 0.0) or np.any(alphas >= 1.0):
        raise ValueError("quantile level out of range")
    zq = std_normal_quantile(alphas)
    f_mat = _fit_matrix(fit, X)
    if mode == "plugin":
        f_bar = f_mat.mean(axis=0)
        if fit.model == "gaussian-bart":
            sig = float(np.sqrt(np.mean([d.sigma2 for d in fit.draws])))
            scaled_q = f_bar[:, None] + sig * zq[None, :]
            return scaled_q * fit.response_range + fit.response_offset
        c_bar = float(np.mean([d.c for d in fit.draws]))
        s_bar = (1.0 + fit.config.m * c_bar) ** -0.5
        return _transport(fit)(s_bar * (f_bar[:, None] + zq[None, :]))

    n_draws, n_pts = f_mat.shape
    block = max(1, _BLOCK_ELEMS // max(1, n_pts * alphas.size))
    acc = np.zeros((n_pts, alphas.size))
    if fit.model == "gaussian-bart":
        sig = _draw_scales(fit)
        for start in range(0, n_draws, block):
            stop = min(start + block, n_draws)
            q = f_mat[start:stop, :, None] + sig[start:stop, None, None] * zq
            acc += q.sum(axis=0)
        acc = acc / n_draws
        return acc * fit.response_range + fit.response_offset
    s = np.array([d.s for d in fit.draws])
    table = _transport(fit)
    for start in range(0, n_draws, block):
        stop = min(start + block, n_draws)
        arg = s[start:stop, None, None] * (f_mat[start:stop, :, None] + zq)
        acc += table(arg).sum(axis=0)
    return acc / n_draws


def predictive_quantile(fit: FitResult, x, alpha: float, mode: str = "full"):
    """Posterior predictive quantile at level alpha.

    Per draw this pushes the pseudo-response quantile f(x) + Phi^{-1}(alpha)
    through the transport map; full mode averages over draws, plug-in mode
    evaluates at the posterior-mean standardization and fit.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("quantile level out of range")
    _require_draws(fit)
    X, single = _as_points(x)
    if mode == "full":
        out = _per_draw_quantiles(fit, X, alpha).mean(axis=0)
    elif mode == "plugin":
        f_bar = _fit_matrix(fit, X).mean(axis=0)
        zq = float(std_normal_quantile(alpha))
        if fit.model == "gaussian-bart":
            sig2 = float(np.mean([d.sigma2 for d in fit.draws]))
            scaled_q = f_bar + np.sqrt(sig2) * zq
            out = scaled_q * fit.response_range + fit.response_offset
        else:
            c_bar = float(np.mean([d.c for d in fit.draws]))
            s_bar = (1.0 + fit.config.m * c_bar) ** -0.5
            out = _transport(fit)(s_bar * (f_bar + zq))
    else:
        raise ValueError("mode must be 'full' or 'plugin'")
    return float(out[0]) if single else out


def quantile_posterior_interval(
    fit: FitResult, x, alpha: float, level: float = 0.95
):
    """Posterior probability interval for the conditional alpha-quantile.

    Order statistics of the per-draw quantile sample at probabilities
    (1 - level)/2 and (1 + level)/2. Requires at least 40 draws.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("quantile level out of range")
    _require_draws(fit, minimum=40)
    X, single = _as_points(x)
    qs = _per_draw_quantiles(fit, X, alpha)
    lo, hi = np.quantile(qs, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    if single:
        return float(lo[0]), float(hi[0])
    return lo, hi


def quantile_posterior_intervals(
    fit: FitResult, x, alphas, level: float = 0.95
) -> tuple[np.ndarray, np.ndarray]:
    """Batched posterior intervals: two arrays of shape (points, levels)."""
    _require_draws(fit, minimum=40)
    X, _ = _as_points(x)
    alphas = np.asarray(alphas, dtype=float)
    f_mat = _fit_matrix(fit, X)
    lo = np.empty((X.shape[0], alphas.size))
    hi = np.empty_like(lo)
    for j, alpha in enumerate(alphas):
        qs = _per_draw_quantiles(fit, X, float(alpha), f_mat=f_mat)
        lo[:, j], hi[:, j] = np.quantile(
            qs, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0
        )
    return lo, hi


def density_posterior_band(
    fit: FitResult, x, y_grid, level: float = 0.90
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise posterior band of the per-draw predictive densities."""
    _require_draws(fit, minimum=2)
    X, single = _as_points(x)
    if not single and X.shape[0] != 1:
        raise ValueError("density bands are per test point")
    y_grid = np.asarray(y_grid, dtype=float)
    f_mat = _fit_matrix(fit, X)  # (draws, 1)

    if fit.model == "gaussian-bart":
        scaled = (y_grid - fit.response_offset) / fit.response_range
        sig = _draw_scales(fit)
        t = (scaled[None, :] - f_mat) / sig[:, None]
        dens = std_normal_pdf(t) / sig[:, None] / fit.response_range
    else:
        z = std_normal_quantile(fit.marginal.cdf(y_grid))
        ratio = fit.marginal.pdf(y_grid) / std_normal_pdf(z)
        s = np.array([d.s for d in fit.draws])
        zt = z[None, :] / s[:, None] - f_mat
        dens = std_normal_pdf(zt) * ratio[None, :] / s[:, None]
    lo, hi = np.quantile(dens, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return lo, hi
