"""Estimator-style wrappers over the core algorithms.

These follow scikit-learn conventions: hyperparameters go to __init__
verbatim (so get_params / set_params / clone work), fitting happens in
fit(), and learned quantities live in trailing-underscore attributes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .benchmarks import glmm_fit, glmm_loglik
from .mif import CoolingSchedule, MifSettings, pif_run, staged_search
from .panel import PanelDataset, PanelLoglik, PanelParams, PanelPomp, panel_loglik
from .rngs import derive_rng

__all__ = [
    "ParticleFilter",
    "PanelIteratedFilter",
    "StagedSearch",
    "NegBinTrendModel",
]

DEFAULT_RHO = 0.7 ** (1 / 50)


class ParticleFilter(BaseEstimator):
    """Replicated particle-filter likelihood evaluation for a panel."""

    def __init__(self, J=1000, n_reps=1, seed=0, allow_fail=True, workers=1):
        self.J = J
        self.n_reps = n_reps
        self.seed = seed
        self.allow_fail = allow_fail
        self.workers = workers

    def evaluate(self, panel: PanelPomp, data: PanelDataset, params: PanelParams) -> PanelLoglik:
        return panel_loglik(
            panel, data, params,
            J=self.J, n_reps=self.n_reps, seed=self.seed,
            workers=self.workers, allow_fail=self.allow_fail,
        )

    def score(self, panel, data, params) -> float:
        """Total panel log-likelihood (higher is better)."""
        return self.evaluate(panel, data, params).total


class PanelIteratedFilter(BaseEstimator):
    """One iterated-filtering run, exposed as a fit() estimator."""

    def __init__(self, J=500, M=150, rho=DEFAULT_RHO, marginalize=False,
                 base_sd=None, sd_overrides=None, seed=0):
        self.J = J
        self.M = M
        self.rho = rho
        self.marginalize = marginalize
        self.base_sd = base_sd
        self.sd_overrides = sd_overrides
        self.seed = seed

    def _settings(self) -> MifSettings:
        return MifSettings(
            J=self.J, M=self.M, schedule=CoolingSchedule(rho=self.rho),
            marginalize=self.marginalize, base_sd=self.base_sd,
            sd_overrides=self.sd_overrides or {},
        )

    def fit(self, panel: PanelPomp, data: PanelDataset, start: PanelParams):
        rng = derive_rng(self.seed, "pif")
        self.record_ = pif_run(panel, data, start, self._settings(), rng)
        self.params_ = self.record_.mean_params()
        return self

    def score(self, panel, data, params=None, n_reps=5) -> float:
        params = self.params_ if params is None else params
        return panel_loglik(panel, data, params, J=self.J, n_reps=n_reps, seed=self.seed).total


class StagedSearch(BaseEstimator):
    """Multi-stage search with top-fraction selection between stages."""

    def __init__(self, stage_iterations=(150, 150, 250), J=500, rho=DEFAULT_RHO,
                 marginalize=False, selection_fraction=0.25, eval_reps=5,
                 base_sd=None, sd_overrides=None, seed=0, workers=1):
        self.stage_iterations = stage_iterations
        self.J = J
        self.rho = rho
        self.marginalize = marginalize
        self.selection_fraction = selection_fraction
        self.eval_reps = eval_reps
        self.base_sd = base_sd
        self.sd_overrides = sd_overrides
        self.seed = seed
        self.workers = workers

    def _stages(self) -> list[MifSettings]:
        return [
            MifSettings(
                J=self.J, M=int(m), schedule=CoolingSchedule(rho=self.rho),
                marginalize=self.marginalize, base_sd=self.base_sd,
                sd_overrides=self.sd_overrides or {},
            )
            for m in self.stage_iterations
        ]

    def fit(self, panel: PanelPomp, data: PanelDataset, initial_draws: Sequence[PanelParams]):
        self.result_ = staged_search(
            panel, data, initial_draws, self._stages(),
            selection_fraction=self.selection_fraction, seed=self.seed,
            eval_reps=self.eval_reps, workers=self.workers,
        )
        self.best_params_ = self.result_.best_params
        self.loglik_ = self.result_.loglik
        self.loglik_se_ = self.result_.se
        return self


class NegBinTrendModel(BaseEstimator):
    """Benchmark regression: polynomial trend, NB counts, unit intercepts."""

    def __init__(self, degree=1, n_nodes=20, restarts=3, seed=0):
        self.degree = degree
        self.n_nodes = n_nodes
        self.restarts = restarts
        self.seed = seed

    def fit(self, units: Sequence[tuple[np.ndarray, np.ndarray]], response_label="y", start=None):
        res = glmm_fit(
            self.degree, units, response_label=response_label,
            n_nodes=self.n_nodes, restarts=self.restarts, seed=self.seed, start=start,
        )
        self.spec_ = res.spec
        self.coef_ = np.asarray(res.spec.coefficients)
        self.dispersion_ = res.spec.dispersion
        self.intercept_sd_ = res.spec.random_intercept_sd
        self.loglik_ = res.loglik
        self.converged_ = res.converged
        return self

    def score(self, units) -> float:
        return glmm_loglik(self.spec_, units, n_nodes=self.n_nodes)

    @property
    def n_params_(self) -> int:
        return self.degree + 3
