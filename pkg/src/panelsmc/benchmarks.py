"""Non-mechanistic benchmarks and model-comparison utilities.

The benchmark family is a negative binomial regression with a polynomial
time trend and a Gaussian random intercept per unit, fitted separately to
each response category. Alongside it live the AIC bookkeeping, a scoring
scaffold for externally supplied trajectory predictions, and the
conditional log-likelihood comparison used for residual diagnosis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial.hermite import hermgauss
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import DataError
from .measures import nbinom_logpmf
from .pfilter import FilterResult

__all__ = [
    "GlmmSpec",
    "GlmmFit",
    "glmm_loglik",
    "glmm_fit",
    "aic",
    "AicRow",
    "aic_table",
    "score_external_predictions",
    "conditional_loglik_compare",
    "CondLoglikComparison",
]

Units = Sequence[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class GlmmSpec:
    """Polynomial-trend negative binomial model with a unit random intercept.

    log mean at time t is the degree-`degree` polynomial in t given by
    `coefficients` plus a N(0, random_intercept_sd^2) intercept per unit.
    """

    degree: int
    response_label: str
    coefficients: tuple[float, ...]
    dispersion: float
    random_intercept_sd: float

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        if len(self.coefficients) != self.degree + 1:
            raise ValueError("need degree + 1 coefficients")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be > 0")
        if self.random_intercept_sd < 0:
            raise ValueError("random_intercept_sd must be >= 0")


@dataclass
class GlmmFit:
    spec: GlmmSpec
    loglik: float
    converged: bool
    n_iter: int


def _poly_eta(times: np.ndarray, coefficients) -> np.ndarray:
    eta = np.zeros_like(times, dtype=float)
    for k, beta in enumerate(coefficients):
        eta = eta + beta * times**k
    return eta


def _cond_logliks(bs: np.ndarray, eta: np.ndarray, counts: np.ndarray, tau: float) -> np.ndarray:
    """Conditional log-likelihood at each intercept value, vectorized."""
    mu = np.exp(eta[None, :] + np.atleast_1d(bs)[:, None])
    return np.sum(nbinom_logpmf(counts[None, :], mu, tau), axis=1)


def _posterior_mode(eta, counts, tau, sigma_b, hint=0.0):
    """Mode and curvature of the log posterior of the intercept.

    The log posterior is strictly concave in b, so damped Newton from any
    start converges; gradient and curvature are analytic.
    """
    b = float(hint)
    for _ in range(100):
        mu = np.exp(eta + b)
        grad = float(np.sum(counts - (counts + tau) * mu / (tau + mu))) - b / sigma_b**2
        curv = float(np.sum((counts + tau) * mu * tau / (tau + mu) ** 2)) + 1.0 / sigma_b**2
        step = grad / curv
        step = np.clip(step, -5 * sigma_b, 5 * sigma_b)
        b += step
        if abs(step) < 1e-12:
            break
    mu = np.exp(eta + b)
    curv = float(np.sum((counts + tau) * mu * tau / (tau + mu) ** 2)) + 1.0 / sigma_b**2
    return b, curv


def _unit_integrated_loglik(
    eta: np.ndarray, counts: np.ndarray, tau: float, sigma_b: float, n_nodes: int,
    hint: float = 0.0,
) -> tuple[float, float]:
    """log of the conditional likelihood integrated over the random intercept,
    by Gauss-Hermite quadrature recentered at the conditional mode."""
    mode, curv = _posterior_mode(eta, counts, tau, sigma_b, hint)
    scale = np.sqrt(2.0 / curv)
    nodes, weights = hermgauss(n_nodes)
    b_nodes = mode + scale * nodes
    logg = (
        _cond_logliks(b_nodes, eta, counts, tau)
        - 0.5 * (b_nodes / sigma_b) ** 2
        - 0.5 * np.log(2 * np.pi * sigma_b**2)
    )
    if not np.all(np.isfinite(logg)):
        raise DataError("nonfinite integrand in random-intercept quadrature")
    return float(np.log(scale) + logsumexp(logg + nodes**2 + np.log(weights))), mode


def glmm_loglik(
    spec: GlmmSpec, units: Units, n_nodes: int = 20, _mode_cache: dict | None = None
) -> float:
    """Marginal log-likelihood, summed over units.

    With random_intercept_sd == 0 this is exactly the plain negative
    binomial regression log-likelihood. A mode cache warm-starts the
    per-unit posterior mode search across repeated calls.
    """
    if len(units) < 1:
        raise ValueError("need at least one unit")
    total = 0.0
    for i, (times, counts) in enumerate(units):
        times = np.asarray(times, dtype=float)
        counts = np.asarray(counts)
        eta = _poly_eta(times, spec.coefficients)
        if spec.random_intercept_sd == 0:
            total += float(np.sum(nbinom_logpmf(counts, np.exp(eta), spec.dispersion)))
        else:
            hint = _mode_cache.get(i, 0.0) if _mode_cache is not None else 0.0
            ll, mode = _unit_integrated_loglik(
                eta, counts, spec.dispersion, spec.random_intercept_sd, n_nodes, hint=hint
            )
            if _mode_cache is not None:
                _mode_cache[i] = mode
            total += ll
    return total


def _moment_start(degree: int, units: Units) -> np.ndarray:
    t = np.concatenate([np.asarray(u[0], dtype=float) for u in units])
    y = np.concatenate([np.asarray(u[1], dtype=float) for u in units])
    z = np.log(y + 0.5)
    X = np.column_stack([t**k for k in range(degree + 1)])
    beta, *_ = np.linalg.lstsq(X, z, rcond=None)
    mu = np.exp(X @ beta)
    excess = np.mean((y - mu) ** 2 - mu)
    tau = float(np.mean(mu**2) / excess) if excess > 0 else 10.0
    tau = min(max(tau, 0.05), 100.0)
    unit_means = np.array([np.mean(np.log(np.asarray(u[1]) + 0.5)) for u in units])
    sigma_b = float(np.std(unit_means, ddof=1)) if len(units) > 1 else 0.5
    sigma_b = min(max(sigma_b, 0.05), 3.0)
    return np.concatenate([beta, [np.log(tau), np.log(sigma_b)]])


def glmm_fit(
    degree: int,
    units: Units,
    *,
    response_label: str = "y",
    n_nodes: int = 20,
    restarts: int = 3,
    seed: int = 0,
    max_iter: int = 4000,
    start: np.ndarray | None = None,
) -> GlmmFit:
    """Maximize the marginal likelihood by Nelder-Mead over
    (coefficients, log dispersion, log intercept sd), restarting from
    jittered moment-based starts."""
    if degree not in (1, 2, 3):
        raise ValueError("degree must be 1, 2 or 3")

    mode_cache: dict = {}

    def objective(theta):
        beta = theta[: degree + 1]
        tau = float(np.exp(theta[degree + 1]))
        sigma_b = float(np.exp(theta[degree + 2]))
        spec = GlmmSpec(degree, response_label, tuple(beta), tau, sigma_b)
        try:
            return -glmm_loglik(spec, units, n_nodes=n_nodes, _mode_cache=mode_cache)
        except (DataError, FloatingPointError, OverflowError):
            return 1e12

    base = _moment_start(degree, units) if start is None else np.asarray(start, dtype=float)
    rng = np.random.default_rng(seed)
    best = None
    converged = False
    n_iter = 0
    for r in range(max(1, restarts)):
        x0 = base if r == 0 else base + rng.normal(0, 0.3, size=base.size)
        res = minimize(
            objective, x0, method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-6, "fatol": 1e-8},
        )
        n_iter += res.nit
        if best is None or res.fun < best.fun:
            best = res
            converged = bool(res.success)
    if not converged:
        warnings.warn("benchmark fit did not converge; returning best point found")
    theta = best.x
    spec = GlmmSpec(
        degree,
        response_label,
        tuple(float(v) for v in theta[: degree + 1]),
        float(np.exp(theta[degree + 1])),
        float(np.exp(theta[degree + 2])),
    )
    return GlmmFit(spec=spec, loglik=float(-best.fun), converged=converged, n_iter=n_iter)


def aic(n_params: int, loglik: float) -> float:
    """Twice the number of estimated parameters minus twice the maximized
    log-likelihood."""
    if n_params < 0:
        raise ValueError("n_params must be >= 0")
    return 2.0 * n_params - 2.0 * loglik


@dataclass(frozen=True)
class AicRow:
    model_name: str
    n_params: int
    loglik: float

    @property
    def aic(self) -> float:
        return aic(self.n_params, self.loglik)


def aic_table(rows: Sequence[AicRow]) -> pd.DataFrame:
    """Rows sorted by AIC ascending, ties broken by model name."""
    df = pd.DataFrame(
        {
            "model": [r.model_name for r in rows],
            "parameters": [r.n_params for r in rows],
            "loglik": [r.loglik for r in rows],
            "aic": [r.aic for r in rows],
        }
    )
    return df.sort_values(["aic", "model"], kind="stable").reset_index(drop=True)


def score_external_predictions(
    predictions: Mapping[tuple[str, float, str], float],
    data,
    tau_grid: Sequence[float],
) -> tuple[float, float]:
    """Score externally supplied mean trajectories against the panel data.

    For each dispersion in tau_grid the total negative binomial
    log-likelihood of all observed counts is computed at the predicted
    means; returns (best_tau, best_loglik). Predictions must cover every
    observed (unit, time, label) triple.
    """
    tau_grid = np.asarray(tau_grid, dtype=float)
    if tau_grid.size < 1 or np.any(tau_grid <= 0):
        raise ValueError("tau_grid must contain positive dispersions")
    obs_items = []
    gaps = []
    for uid in data.unit_ids:
        for ob in data.obs(uid):
            for label, count in ob.counts.items():
                key = (uid, float(ob.time), label)
                if key in predictions:
                    obs_items.append((count, float(predictions[key])))
                else:
                    gaps.append(key)
    if gaps:
        raise DataError(f"predictions missing for {len(gaps)} observations, e.g. {gaps[:5]}")
    counts = np.array([c for c, _ in obs_items], dtype=float)
    means = np.array([m for _, m in obs_items], dtype=float)
    best_tau, best_ll = None, -np.inf
    for tau in tau_grid:
        ll = float(np.sum(nbinom_logpmf(counts, means, float(tau))))
        if ll > best_ll:
            best_tau, best_ll = float(tau), ll
    return best_tau, best_ll


@dataclass
class CondLoglikComparison:
    """Per-observation conditional log-likelihood anomalies between two runs."""

    table: pd.DataFrame
    per_unit: pd.Series
    per_label: pd.Series
    total_delta: float


def conditional_loglik_compare(
    run_a: Mapping[str, FilterResult], run_b: Mapping[str, FilterResult]
) -> CondLoglikComparison:
    """Anomaly = conditional log-likelihood under run_a minus run_b, per unit
    and time, plus per-label rows when both runs carry the per-label
    decomposition. Summing the time-level rows reproduces the difference
    of total log-likelihoods exactly.
    """
    if set(run_a) != set(run_b):
        raise DataError("runs cover different units")
    rows = []
    for uid in sorted(run_a):
        a, b = run_a[uid], run_b[uid]
        if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
            raise DataError(f"unit {uid!r}: runs cover different observation times")
        for n, t in enumerate(a.times):
            rows.append(
                {
                    "unit": uid,
                    "time": float(t),
                    "label": "(all)",
                    "loglik_a": float(a.cond_logliks[n]),
                    "loglik_b": float(b.cond_logliks[n]),
                }
            )
        if a.label_cond_logliks is not None and b.label_cond_logliks is not None:
            common = sorted(set(a.label_cond_logliks) & set(b.label_cond_logliks))
            for label in common:
                la, lb = a.label_cond_logliks[label], b.label_cond_logliks[label]
                for n, t in enumerate(a.times):
                    if np.isnan(la[n]) and np.isnan(lb[n]):
                        continue
                    rows.append(
                        {
                            "unit": uid,
                            "time": float(t),
                            "label": label,
                            "loglik_a": float(la[n]),
                            "loglik_b": float(lb[n]),
                        }
                    )
    table = pd.DataFrame(rows)
    table["delta"] = table["loglik_a"] - table["loglik_b"]
    overall = table[table["label"] == "(all)"]
    labelled = table[table["label"] != "(all)"]
    per_unit = overall.groupby("unit")["delta"].sum()
    per_label = (
        labelled.groupby("label")["delta"].sum()
        if len(labelled)
        else pd.Series(dtype=float, name="delta")
    )
    return CondLoglikComparison(
        table=table,
        per_unit=per_unit,
        per_label=per_label,
        total_delta=float(overall["delta"].sum()),
    )
