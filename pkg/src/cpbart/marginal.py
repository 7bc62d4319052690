"""Nonparametric response marginal: Gaussian KDE with exact CDF inversion.

The marginal is a mixture of Gaussian kernels centred at the training
responses, so the CDF is a mixture of normal CDFs and stays in closed form.
The quantile function is obtained by bisection, which is deterministic and
accurate to the stated tolerance everywhere on the support.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "DegenerateSampleError",
    "MarginalModel",
    "fit_kde",
    "std_normal_cdf",
    "std_normal_pdf",
    "std_normal_quantile",
]

# CDF output is clipped away from {0, 1} so that pseudo-responses
# z = ndtri(cdf(y)) stay finite for arbitrary query points.
CDF_CLIP = 1e-12

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_MAX_BLOCK = 4_000_000  # elements per kernel-matrix block


class DegenerateSampleError(ValueError):
    """Raised when a response sample cannot support a KDE fit."""


def std_normal_cdf(z):
    """Standard normal CDF, accurate to double precision."""
    return ndtr(z)


def std_normal_quantile(u):
    """Standard normal quantile function; requires u in (0, 1)."""
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ValueError("quantile level out of range")
    return ndtri(u)


def std_normal_pdf(z):
    """Standard normal density."""
    z = np.asarray(z, dtype=float)
    return np.exp(-0.5 * z * z) / _SQRT_2PI


@dataclass(frozen=True, eq=False)
class MarginalModel:
    """Gaussian KDE of the response marginal.

    Immutable after fitting; every evaluation method is pure and safe to
    call concurrently.

    Attributes
    ----------
    centers : ndarray
        Training responses, one Gaussian kernel per point.
    bandwidth : float
        Common kernel standard deviation, in response units.
    support_lo, support_hi : float
        Bounds of the numeric quantile search; the CDF is below 1e-9 at
        ``support_lo`` and above 1 - 1e-9 at ``support_hi``.
    """

    centers: np.ndarray
    bandwidth: float
    support_lo: float
    support_hi: float

    def _kernel_mean(self, y, kernel: str) -> np.ndarray:
        """Mean over kernels of the normal CDF or PDF at the query points."""
        y = np.asarray(y, dtype=float)
        flat = np.atleast_1d(y).ravel()
        out = np.empty(flat.shape, dtype=float)
        n = self.centers.size
        block = max(1, _MAX_BLOCK // n)
        for start in range(0, flat.size, block):
            stop = min(start + block, flat.size)
            t = (flat[start:stop, None] - self.centers[None, :]) / self.bandwidth
            if kernel == "cdf":
                out[start:stop] = ndtr(t).mean(axis=1)
            else:
                out[start:stop] = np.exp(-0.5 * t * t).mean(axis=1) / (
                    _SQRT_2PI * self.bandwidth
                )
        return out.reshape(np.shape(y))

    def cdf(self, y):
        """Marginal CDF, clipped to [CDF_CLIP, 1 - CDF_CLIP]. Total on reals."""
        out = np.clip(self._kernel_mean(y, "cdf"), CDF_CLIP, 1.0 - CDF_CLIP)
        return float(out) if np.ndim(y) == 0 else out

    def pdf(self, y):
        """Marginal density (mean of kernel densities)."""
        out = self._kernel_mean(y, "pdf")
        return float(out) if np.ndim(y) == 0 else out

    def quantile(self, u):
        """Inverse CDF by bisection on [support_lo, support_hi].

        Converges to |cdf(y) - u| < 1e-10 wherever u lies inside the CDF
        range of the support interval.
        """
        u_arr = np.asarray(u, dtype=float)
        if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
            raise ValueError("quantile level out of range")
        flat = np.atleast_1d(u_arr).ravel()
        lo = np.full(flat.shape, self.support_lo)
        hi = np.full(flat.shape, self.support_hi)
        scale = max(abs(self.support_lo), abs(self.support_hi), 1.0)
        for _ in range(90):
            mid = 0.5 * (lo + hi)
            above = self._kernel_mean(mid, "cdf") >= flat
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
            if np.max(hi - lo) < 1e-15 * scale:
                break
        out = (0.5 * (lo + hi)).reshape(np.shape(u_arr))
        return float(out) if np.ndim(u) == 0 else out


def fit_kde(y) -> MarginalModel:
    """Fit a Gaussian KDE to the response sample.

    The bandwidth follows Silverman's rule of thumb,
    h = 0.9 * min(sd, IQR / 1.34) * n**(-1/5), falling back to the sample
    standard deviation when the IQR degenerates from ties.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 2:
        raise DegenerateSampleError("degenerate marginal sample")
    sd = float(y.std(ddof=1))
    if not sd > 0.0:
        raise DegenerateSampleError("degenerate marginal sample")
    q25, q75 = np.percentile(y, [25.0, 75.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0.0 else sd
    bandwidth = 0.9 * spread * n ** (-0.2)
    return MarginalModel(
        centers=y.copy(),
        bandwidth=bandwidth,
        support_lo=float(y.min() - 10.0 * bandwidth),
        support_hi=float(y.max() + 10.0 * bandwidth),
    )
