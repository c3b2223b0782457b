"""Negative binomial measurement kernel.

Parameterized by mean ``mu`` and dispersion ``tau`` so that the variance
is ``mu + mu**2 / tau``. Small tau means heavy overdispersion; tau -> inf
recovers the Poisson.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

__all__ = ["MEAN_FLOOR", "nbinom_logpmf", "nbinom_rvs"]

# A latent density clamped to exactly zero still assigns finite (tiny)
# probability to positive counts, so one impossible observation cannot
# zero out an entire particle swarm.
MEAN_FLOOR = 1e-8


def nbinom_logpmf(y, mu, tau):
    """Log pmf of the mean/dispersion negative binomial.

    Parameters
    ----------
    y : int or array of ints >= 0
    mu : mean(s), >= 0; values at or below MEAN_FLOOR are floored, except
        that y == 0 at a floored mean scores exactly 0 (probability one).
    tau : dispersion, > 0.

    Returns
    -------
    float or ndarray, never NaN, finite for all valid inputs.
    """
    y = np.asarray(y)
    if np.any(y < 0) or not np.issubdtype(y.dtype, np.number):
        raise ValueError("counts must be nonnegative")
    y = y.astype(float)
    mu = np.asarray(mu, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("dispersion tau must be > 0")
    floored = mu <= MEAN_FLOOR
    mu_f = np.where(floored, MEAN_FLOOR, mu)
    out = (
        gammaln(y + tau)
        - gammaln(tau)
        - gammaln(y + 1.0)
        + tau * np.log(tau / (tau + mu_f))
        + y * np.log(mu_f / (tau + mu_f))
    )
    out = np.where(floored & (y == 0), 0.0, out)
    if out.ndim == 0:
        return float(out)
    return out


def nbinom_rvs(mu, tau, rng: np.random.Generator, size=None):
    """Sample counts matching nbinom_logpmf, via the gamma-Poisson mixture.

    Works for non-integer tau, which numpy's negative_binomial does not.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(np.asarray(tau) <= 0):
        raise ValueError("dispersion tau must be > 0")
    mu_f = np.maximum(mu, MEAN_FLOOR)
    lam = rng.gamma(shape=tau, scale=mu_f / tau, size=size)
    return rng.poisson(lam)
