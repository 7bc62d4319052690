"""Copula-process core: scaling, correlation matrix, transport map, likelihoods.

The production sampler never forms the n-by-n correlation matrix; ``omega``
and ``log_copula_density`` exist for verification at small n and are guarded
accordingly. All likelihoods are computed in log space because the
(1 + m c)^(n/2) factor overflows for n in the hundreds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .marginal import (
    MarginalModel,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)
from .trees import Ensemble, evaluate_ensemble

__all__ = [
    "CopulaState",
    "log_copula_density",
    "log_extended_likelihood",
    "log_jacobian",
    "omega",
    "scale_s",
    "transport_forward",
    "transport_inverse",
]

_OMEGA_GUARD = 2000
_LOG_2PI = math.log(2.0 * math.pi)


def scale_s(c: float, m: int) -> float:
    """Pseudo-response standardization s = (1 + m c)**(-1/2)."""
    if c <= 0.0:
        raise ValueError("nonpositive leaf variance")
    if m < 1:
        raise ValueError("m must be at least 1")
    return (1.0 + m * c) ** -0.5


@dataclass(frozen=True)
class CopulaState:
    """Leaf-variance scale c together with its implied standardization s."""

    c: float
    s: float
    m: int

    @staticmethod
    def from_c(c: float, m: int) -> "CopulaState":
        return CopulaState(c=c, s=scale_s(c, m), m=m)


def omega(assignments, c: float) -> np.ndarray:
    """Correlation matrix s^2 (c E E^T + I) of the marginalized model.

    ``assignments`` holds one leaf-index vector per tree; (E E^T)[i, l]
    counts the trees in which points i and l share a leaf. Verification
    tool only: guarded to n <= 2000.
    """
    if c <= 0.0:
        raise ValueError("nonpositive leaf variance")
    assignments = [np.asarray(a) for a in assignments]
    n = assignments[0].size
    if n > _OMEGA_GUARD:
        raise ValueError("omega is a verification tool")
    shared = np.zeros((n, n))
    for a in assignments:
        shared += a[:, None] == a[None, :]
    s2 = scale_s(c, len(assignments)) ** 2
    return s2 * (c * shared + np.eye(n))


def transport_forward(z_tilde, state: CopulaState, marg: MarginalModel):
    """Push pseudo-responses to the response scale: F_Y^{-1}(Phi(s z))."""
    z_tilde = np.asarray(z_tilde, dtype=float)
    u = np.clip(std_normal_cdf(state.s * z_tilde), 1e-15, 1.0 - 1e-15)
    return marg.quantile(u)


def transport_inverse(y, state: CopulaState, marg: MarginalModel):
    """Pull responses back to the pseudo-response scale: Phi^{-1}(F_Y(y)) / s."""
    return std_normal_quantile(marg.cdf(y)) / state.s


def log_jacobian(z, y, state: CopulaState, marg: MarginalModel) -> float:
    """Log determinant of the transport map: sum of log(s phi(z_i) / p_Y(y_i)).

    ``z`` must be the standardized pseudo-responses Phi^{-1}(F_Y(y)).
    """
    z = np.asarray(z, dtype=float)
    y = np.asarray(y, dtype=float)
    dens = marg.pdf(y)
    if np.any(dens <= 0.0):
        warnings.warn("marginal density is zero at some points; Jacobian is -inf")
        return -math.inf
    return float(
        z.size * math.log(state.s)
        + np.sum(np.log(std_normal_pdf(z)))
        - np.sum(np.log(dens))
    )


def log_extended_likelihood(
    y, X, ens: Ensemble, c: float, marg: MarginalModel
) -> float:
    """Joint log density of the responses and the leaf values.

    (n/2) log(1 + m c) - sum[(z_i sqrt(1 + m c) - f(x_i))^2 - z_i^2] / 2
    + sum log p_Y(y_i) + sum over leaves of log N(value; 0, c),
    with z_i = Phi^{-1}(F_Y(y_i)). Evaluated in O(n + K) after the
    ensemble fit.
    """
    if c <= 0.0:
        raise ValueError("nonpositive leaf variance")
    y = np.asarray(y, dtype=float)
    z = std_normal_quantile(marg.cdf(y))
    f = evaluate_ensemble(ens, np.atleast_2d(X))
    m = ens.m
    root = math.sqrt(1.0 + m * c)
    data_term = 0.5 * y.size * math.log1p(m * c) - 0.5 * float(
        np.sum((z * root - f) ** 2 - z * z)
    )
    marg_term = float(np.sum(np.log(marg.pdf(y))))
    leaf_term = 0.0
    for vals in ens.leaf_values:
        vals = np.asarray(vals, dtype=float)
        leaf_term += float(
            -0.5 * vals.size * (_LOG_2PI + math.log(c)) - np.sum(vals * vals) / (2.0 * c)
        )
    return data_term + marg_term + leaf_term


def log_copula_density(u, assignments, c: float) -> float:
    """Gaussian copula-process log density at u via a symmetric factorization.

    -log|Omega|/2 - z^T (Omega^{-1} - I) z / 2 with z = Phi^{-1}(u).
    Verification tool, n <= 2000; raises if Omega is numerically not
    positive definite (which would indicate a bug).
    """
    u = np.asarray(u, dtype=float)
    z = std_normal_quantile(u)
    cov = omega(assignments, c)
    chol, lower = cho_factor(cov, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    w = solve_triangular(chol, z, lower=lower)
    return -0.5 * logdet - 0.5 * (float(w @ w) - float(z @ z))
