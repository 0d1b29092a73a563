"""Posterior probability estimators for interval hypotheses on a lift.

Two routes are available.  ``kde`` smooths posterior draws of the lift with
a Gaussian kernel and reads the interval probability off the kernel CDF, so
that estimates are never exactly 0 or 1.  ``exact`` integrates the
conjugate Beta marginal posteriors numerically; it is the large-draw limit
of ``kde`` and is far cheaper per repetition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(192)
_TAIL = 1e-16


@dataclass(frozen=True)
class PosteriorConfig:
    """Posterior estimation settings.

    Attributes
    ----------
    draws : int
        Posterior draws per group and repetition (``kde``); also sets the
        default clipping level ``1 / (2 * draws)`` for both methods.
    prior_alpha : float or sequence
        Dirichlet concentrations per cell (multinomial family).
    beta_prior : (float, float)
        Beta prior per outcome probability (independent family).
    clip_eps : float, optional
        Probabilities are clipped into ``[clip_eps, 1 - clip_eps]``.
    method : {"kde", "exact"}
    """

    draws: int = 4000
    prior_alpha: float | tuple = 1.0
    beta_prior: tuple = (1.0, 1.0)
    clip_eps: float | None = None
    method: str = "kde"

    def __post_init__(self):
        if int(self.draws) != self.draws or self.draws < 100:
            raise ValueError("draws must be an integer >= 100")
        if self.method not in ("kde", "exact"):
            raise ValueError(f"unknown posterior method {self.method!r}")
        if np.any(np.asarray(self.prior_alpha, float) <= 0):
            raise ValueError("prior_alpha entries must be positive")
        if self.clip_eps is not None and not 0 < self.clip_eps <= 1.0 / (2 * self.draws):
            raise ValueError("clip_eps must lie in (0, 1/(2*draws)]")
        if isinstance(self.prior_alpha, list):
            object.__setattr__(self, "prior_alpha", tuple(self.prior_alpha))

    @property
    def eps(self) -> float:
        return self.clip_eps if self.clip_eps is not None else 1.0 / (2 * self.draws)


def silverman_bandwidth(x: np.ndarray) -> np.ndarray:
    """Silverman's rule of thumb, column-wise for 2-D input."""
    x = np.asarray(x, float)
    n = x.shape[0]
    sd = x.std(axis=0, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    spread = np.minimum(sd, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, sd)
    spread = np.where(np.ptp(x, axis=0) > 0, spread, 0.0)
    return 0.9 * spread * n ** (-0.2)


def kde_interval_prob(theta_draws, delta_L, delta_U) -> np.ndarray:
    """Gaussian-kernel estimate of ``Pr(delta_L < theta < delta_U)`` per column."""
    theta = np.asarray(theta_draws, float)
    if theta.ndim == 1:
        theta = theta[:, None]
    h = silverman_bandwidth(theta)
    lo = np.asarray(delta_L, float)
    hi = np.asarray(delta_U, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_h = np.where(h > 0, h, 1.0)
        upper = special.ndtr((hi - theta) / safe_h)
        lower = special.ndtr((lo - theta) / safe_h)
    # Degenerate draws (zero spread) fall back to the indicator.
    point = ((theta > lo) & (theta < hi)).astype(float)
    dens = np.where(h > 0, upper - lower, point)
    return dens.mean(axis=0)


def _beta_logpdf(x, a, b):
    with np.errstate(divide="ignore"):
        return (a - 1) * np.log(x) + (b - 1) * np.log1p(-x) - special.betaln(a, b)


def lift_interval_prob_beta(aA, bA, aB, bB, delta_L, delta_U) -> np.ndarray:
    """``Pr(delta_L < pi_B / pi_A - 1 < delta_U)`` for independent Beta posteriors.

    Integrates ``f_A(x) [F_B(x (1 + delta_U)) - F_B(x (1 + delta_L))]`` by
    Gauss-Legendre quadrature between extreme quantiles of ``pi_A``.  All
    arguments broadcast to the metric axis; shape parameters must be >= 1.
    """
    aA, bA, aB, bB = (np.atleast_1d(np.asarray(v, float)) for v in (aA, bA, aB, bB))
    lo = np.broadcast_to(np.asarray(delta_L, float), aA.shape)
    hi = np.broadcast_to(np.asarray(delta_U, float), aA.shape)
    if np.any(aA < 1) or np.any(bA < 1):
        raise ValueError("exact lift probabilities need Beta shape parameters >= 1")
    # Integrate between the 1e-16 and 1 - 1e-16 quantiles of pi_A.
    left = special.betaincinv(aA, bA, _TAIL)
    right = special.betaincinv(bA, aA, _TAIL)
    right = 1.0 - right
    half = 0.5 * (right - left)
    x = left[:, None] + half[:, None] * (_GL_NODES[None, :] + 1.0)
    w = half[:, None] * _GL_WEIGHTS[None, :] * np.exp(_beta_logpdf(x, aA[:, None], bA[:, None]))

    def cdf_b(scale):
        with np.errstate(invalid="ignore"):
            y = x * (1.0 + scale[:, None])
        y = np.where(np.isnan(y), np.inf, y)  # 0 * inf only at x = 0, which is excluded
        y = np.clip(y, 0.0, 1.0)
        return special.betainc(aB[:, None], bB[:, None], y)

    upper = np.where(np.isinf(hi)[:, None] & (hi[:, None] > 0), 1.0, cdf_b(np.where(np.isinf(hi), 0.0, hi)))
    lower = np.where(np.isinf(lo)[:, None] & (lo[:, None] < 0), 0.0, cdf_b(np.where(np.isinf(lo), 0.0, lo)))
    num = (w * (upper - lower)).sum(axis=1)
    return np.clip(num / w.sum(axis=1), 0.0, 1.0)
