"""Bootstrap particle filter for a single unit.

Propagate with the model's own simulator, weight with the measurement
density, resample systematically after every observation. The running
sum of conditional log-likelihoods is the log-likelihood estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import FilterFailureError, NumericsError
from .params import ParamVector
from .pomp import Observation, PompModel

__all__ = [
    "WEIGHT_FLOOR",
    "systematic_resample",
    "effective_sample_size",
    "ParticleSwarm",
    "FilterResult",
    "pfilter",
]

# Raw weights below this are treated as zero for resampling purposes; a
# step where every weight is below it counts as a filtering failure but,
# when allowed, contributes log(WEIGHT_FLOOR) instead of killing the run.
WEIGHT_FLOOR = 1e-300
LOG_WEIGHT_FLOOR = float(np.log(WEIGHT_FLOOR))


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    """Systematic (single-uniform) resampling.

    Offspring counts satisfy floor(J*w_i) <= N_i <= ceil(J*w_i); returned
    indices are in ascending order, so uniform weights reproduce the
    identity permutation.
    """
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a nonempty 1-d vector")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ValueError("cannot resample from all-zero weights")
    J = w.size
    points = (np.arange(J) + rng.uniform()) * (total / J)
    idx = np.searchsorted(np.cumsum(w), points, side="left")
    return np.minimum(idx, J - 1).astype(np.intp)


def effective_sample_size(weights) -> float:
    """1 / sum(w_i^2) for normalized weights; equals J when uniform."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


@dataclass
class ParticleSwarm:
    """States plus log-weights for J particles."""

    states: np.ndarray
    log_weights: np.ndarray

    def __post_init__(self):
        if len(self.states) != len(self.log_weights) or len(self.states) < 1:
            raise ValueError("states and log_weights must share a positive length")

    @property
    def size(self) -> int:
        return len(self.log_weights)

    def normalized_weights(self) -> np.ndarray:
        m = np.max(self.log_weights)
        w = np.exp(self.log_weights - m)
        return w / w.sum()


@dataclass
class FilterResult:
    """Output of one particle-filter pass."""

    loglik: float
    cond_logliks: np.ndarray
    ess_trace: np.ndarray
    times: np.ndarray
    n_fail: int = 0
    first_fail_step: int | None = None
    filter_mean_trace: np.ndarray | None = None
    label_cond_logliks: dict[str, np.ndarray] | None = None


def _log_mean_exp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + float(np.log(np.mean(np.exp(x - m))))


def pfilter(
    model: PompModel,
    params,
    observations: Sequence[Observation],
    J: int,
    rng: np.random.Generator,
    *,
    t0: float = 0.0,
    allow_fail: bool = True,
    record_filter_mean: bool = False,
    record_label_logliks: bool = False,
) -> FilterResult:
    """Estimate the log-likelihood of `observations` under `model` at `params`.

    The conditional log-likelihood at step n is log of the mean measurement
    weight over the propagated swarm; particles are then resampled
    systematically. An observation with no measured labels contributes 0
    and leaves the swarm untouched.

    With allow_fail, a step where every raw weight underflows the floor is
    recorded in n_fail, scores log(WEIGHT_FLOOR), and filtering continues
    on uniform weights; otherwise it raises FilterFailureError.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    obs = tuple(observations)
    if not obs:
        raise ValueError("observations must be nonempty")
    times = np.array([o.time for o in obs], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("observation times must be strictly increasing")
    if times[0] <= t0:
        raise ValueError(f"first observation time {times[0]} must be > t0={t0}")
    if isinstance(params, ParamVector):
        params = params.values

    N = len(obs)
    cond = np.empty(N)
    ess = np.empty(N)
    fmeans = np.empty((N, model.state_dim)) if record_filter_mean else None
    label_cond: dict[str, np.ndarray] | None = None
    if record_label_logliks:
        label_cond = {lbl: np.full(N, np.nan) for lbl in model.obs_labels}

    states = model.rinit(params, t0, rng, J)
    n_fail = 0
    first_fail_step = None
    t_prev = t0
    for n, ob in enumerate(obs):
        states = np.asarray(model.rprocess(states, params, t_prev, ob.time, rng), dtype=float)
        logw = np.asarray(model.dmeasure(ob, states, params), dtype=float)
        if np.any(np.isnan(logw)):
            raise NumericsError(f"dmeasure returned NaN at step {n} (t={ob.time})")
        failed = bool(np.max(logw) < LOG_WEIGHT_FLOOR)
        if failed:
            n_fail += 1
            if first_fail_step is None:
                first_fail_step = n
            if not allow_fail:
                raise FilterFailureError(
                    f"all particle weights below floor at step {n} (t={ob.time})",
                    step=n,
                    time=float(ob.time),
                )
            cond[n] = LOG_WEIGHT_FLOOR
            w = np.full(J, 1.0 / J)
        else:
            logw = np.maximum(logw, LOG_WEIGHT_FLOOR)
            cond[n] = _log_mean_exp(logw)
            w = np.exp(logw - np.max(logw))
            w /= w.sum()
        ess[n] = effective_sample_size(w)
        if fmeans is not None:
            fmeans[n] = w @ states
        if label_cond is not None:
            # decomposition over the pre-resampling cloud
            per_label = model.dmeasure_by_label(ob, states, params)
            for lbl, lp in per_label.items():
                label_cond[lbl][n] = _log_mean_exp(np.asarray(lp, dtype=float))
        idx = systematic_resample(w, rng)
        states = states[idx]
        t_prev = ob.time

    return FilterResult(
        loglik=float(np.sum(cond)),
        cond_logliks=cond,
        ess_trace=ess,
        times=times,
        n_fail=n_fail,
        first_fail_step=first_fail_step,
        filter_mean_trace=fmeans,
        label_cond_logliks=label_cond,
    )
