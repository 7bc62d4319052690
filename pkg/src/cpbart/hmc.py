"""Hamiltonian Monte Carlo update for the log leaf-variance scale.

The conditional log-posterior of ctilde = log(c) and its gradient are
available in closed form from a handful of sufficient statistics, so one
HMC update costs O(leapfrog_steps) scalar work regardless of sample size.
Step size adapts by dual averaging during burn-in and is frozen afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

__all__ = [
    "CStats",
    "DualAveraging",
    "HMCConfig",
    "dual_averaging_update",
    "grad_log_posterior_ctilde",
    "hmc_step",
    "leapfrog",
    "log_posterior_ctilde",
]


@dataclass(frozen=True)
class CStats:
    """Sufficient statistics for the conditional posterior of log(c).

    ``sum_z2`` and ``sum_zf`` are the squared sum of the standardized
    pseudo-responses and their cross product with the current ensemble fit;
    ``total_leaves`` and ``sum_sq_leaves`` count leaves and accumulate
    squared leaf values across all trees.
    """

    n: int
    sum_z2: float
    sum_zf: float
    total_leaves: int
    sum_sq_leaves: float
    m: int
    a: float
    b: float

    def __post_init__(self):
        if self.n < 1 or self.total_leaves < self.m or self.m < 1:
            raise ValueError("inconsistent statistics")
        if self.sum_sq_leaves < 0.0 or self.a <= 0.0 or self.b <= 0.0:
            raise ValueError("inconsistent statistics")


@dataclass(frozen=True)
class HMCConfig:
    leapfrog_steps: int = 10
    target_accept: float = 0.8
    init_step: float = 0.1
    adapt_iters: int | None = None  # defaults to the burn-in length

    def __post_init__(self):
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.init_step <= 0.0:
            raise ValueError("init_step must be positive")


def log_posterior_ctilde(ctilde: float, stats: CStats) -> float:
    """Conditional log-posterior of ctilde = log(c), up to an additive constant.

    (n/2) log(1 + m e^ct) - (1 + m e^ct) sum_z2 / 2
    + sqrt(1 + m e^ct) sum_zf - total_leaves * ct / 2
    - sum_sq_leaves / (2 e^ct) - a ct - ct - b / e^ct.

    Overflow-prone pieces are evaluated in log space; a non-finite
    combination returns -inf rather than NaN.
    """
    log_omc = np.logaddexp(0.0, math.log(stats.m) + ctilde)  # log(1 + m e^ct)
    with np.errstate(over="ignore", invalid="ignore"):
        one_plus = np.exp(log_omc)
        sqrt_one_plus = np.exp(0.5 * log_omc)
        inv_ec = np.exp(-ctilde)
        val = (
            0.5 * stats.n * log_omc
            - 0.5 * one_plus * stats.sum_z2
            + sqrt_one_plus * stats.sum_zf
            - 0.5 * stats.total_leaves * ctilde
            - 0.5 * stats.sum_sq_leaves * inv_ec
            - stats.a * ctilde
            - ctilde
            - stats.b * inv_ec
        )
    return float(val) if np.isfinite(val) else -math.inf


def grad_log_posterior_ctilde(ctilde: float, stats: CStats) -> float:
    """Derivative of log_posterior_ctilde with respect to ctilde.

    n m e^ct / (2 (1 + m e^ct)) - (m e^ct / 2) sum_z2
    + m e^ct sum_zf / (2 sqrt(1 + m e^ct)) - total_leaves / 2
    + sum_sq_leaves / (2 e^ct) - a - 1 + b / e^ct.
    """
    log_mec = math.log(stats.m) + ctilde
    log_omc = np.logaddexp(0.0, log_mec)
    with np.errstate(over="ignore", invalid="ignore"):
        mec = np.exp(log_mec)
        val = (
            0.5 * stats.n * expit(log_mec)
            - 0.5 * mec * stats.sum_z2
            + 0.5 * stats.sum_zf * np.exp(log_mec - 0.5 * log_omc)
            - 0.5 * stats.total_leaves
            + 0.5 * stats.sum_sq_leaves * np.exp(-ctilde)
            - stats.a
            - 1.0
            + stats.b * np.exp(-ctilde)
        )
    if np.isnan(val):
        # Competing infinities only occur on the +inf side, where the
        # -(m e^ct) sum_z2 / 2 term dominates.
        return -math.inf
    return float(val)


def leapfrog(
    ctilde: float,
    momentum: float,
    step_size: float,
    n_steps: int,
    stats: CStats,
) -> tuple[float, float]:
    """Integrate Hamiltonian dynamics with unit mass for n_steps steps."""
    q, p = ctilde, momentum
    g = grad_log_posterior_ctilde(q, stats)
    p += 0.5 * step_size * g
    for step in range(n_steps):
        q += step_size * p
        if not math.isfinite(q):
            return q, p
        g = grad_log_posterior_ctilde(q, stats)
        p += (0.5 if step == n_steps - 1 else 1.0) * step_size * g
    return q, p


def hmc_step(
    ctilde: float,
    stats: CStats,
    cfg: HMCConfig,
    step_size: float,
    rng: np.random.Generator,
) -> tuple[float, bool, float]:
    """One HMC update: returns (new ctilde, accepted, acceptance probability).

    Non-finite trajectories reject with acceptance probability zero.
    """
    if step_size <= 0.0:
        raise ValueError("step_size must be positive")
    p0 = float(rng.standard_normal())
    h0 = -log_posterior_ctilde(ctilde, stats) + 0.5 * p0 * p0
    q, p = leapfrog(ctilde, p0, step_size, cfg.leapfrog_steps, stats)
    accept_prob = 0.0
    if math.isfinite(q) and math.isfinite(p):
        h1 = -log_posterior_ctilde(q, stats) + 0.5 * p * p
        delta = h1 - h0
        if math.isfinite(delta):
            accept_prob = min(1.0, math.exp(-delta)) if delta > 0.0 else 1.0
    if rng.uniform() < accept_prob:
        return q, True, accept_prob
    return ctilde, False, accept_prob


@dataclass(frozen=True)
class DualAveraging:
    """State of the Nesterov dual-averaging step-size recursion.

    The log step size is shrunk toward ``mu`` (log of ten times the initial
    step); after ``adapt_iters`` updates the averaged step size is returned
    unchanged.
    """

    target: float
    mu: float
    adapt_iters: int
    log_step_avg: float = 0.0
    h_bar: float = 0.0
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @staticmethod
    def for_init_step(init_step: float, target: float, adapt_iters: int):
        return DualAveraging(
            target=target, mu=math.log(10.0 * init_step), adapt_iters=adapt_iters
        )


def dual_averaging_update(
    state: DualAveraging, accept_prob: float, iteration: int
) -> tuple[DualAveraging, float]:
    """Advance the recursion at 1-based ``iteration``; returns the next step size.

    Past ``adapt_iters`` the state is frozen and the averaged step size is
    returned.
    """
    if iteration < 1:
        raise ValueError("iteration must be at least 1")
    if iteration > state.adapt_iters:
        return state, math.exp(state.log_step_avg)
    w = 1.0 / (iteration + state.t0)
    h_bar = (1.0 - w) * state.h_bar + w * (state.target - accept_prob)
    log_step = state.mu - math.sqrt(iteration) * h_bar / state.gamma
    eta = iteration ** (-state.kappa)
    log_step_avg = eta * log_step + (1.0 - eta) * state.log_step_avg
    new_state = replace(state, h_bar=h_bar, log_step_avg=log_step_avg)
    return new_state, math.exp(log_step)
