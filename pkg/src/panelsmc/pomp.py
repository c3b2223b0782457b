"""The plug-and-play model abstraction.

A model supplies three things: a simulator for the initial state, a
simulator for the latent dynamics, and a measurement log-density. No
transition densities are ever evaluated, so any model you can simulate
can be filtered and fitted.

State is handled as (n, state_dim) float arrays, one row per particle or
simulation. Parameter values arrive as a mapping from name to either a
scalar (plain filtering) or an (n,) array (perturbed-parameter filtering);
model code should broadcast transparently.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import NumericsError

__all__ = [
    "Observation",
    "LatentState",
    "PompModel",
    "SdeModel",
    "rprocess_subdivided",
    "simulate",
]

Params = Mapping[str, "float | np.ndarray"]


@dataclass(frozen=True)
class Observation:
    """Counts observed at one sampling time.

    counts holds the labels actually measured; missing lists labels that
    were expected but absent (empty cells in the data file).
    """

    time: float
    counts: Mapping[str, int]
    missing: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "counts", dict(self.counts))
        object.__setattr__(self, "missing", frozenset(self.missing))
        for label, c in self.counts.items():
            if not float(c).is_integer() or c < 0:
                raise ValueError(
                    f"count for {label!r} at t={self.time} must be a nonnegative integer, got {c}"
                )


class LatentState:
    """A single labeled state vector, nonnegative by contract."""

    __slots__ = ("values", "labels")

    def __init__(self, values, labels):
        self.values = np.asarray(values, dtype=float)
        self.labels = tuple(labels)
        if self.values.shape != (len(self.labels),):
            raise ValueError("state vector length must match its labels")
        if np.any(self.values < 0):
            raise ValueError("state entries must be >= 0")

    def __getitem__(self, label: str) -> float:
        return float(self.values[self.labels.index(label)])

    def __repr__(self):
        body = ", ".join(f"{k}={v:.6g}" for k, v in zip(self.labels, self.values))
        return f"LatentState({body})"


class PompModel(abc.ABC):
    """Behavioral interface every unit model implements.

    Implementations must be reentrant: no internal RNG or mutable state,
    all randomness comes from the Generator passed in. Identical rng
    streams and inputs must reproduce trajectories bit for bit.
    """

    state_labels: tuple[str, ...]
    obs_labels: tuple[str, ...]

    @property
    def state_dim(self) -> int:
        return len(self.state_labels)

    @abc.abstractmethod
    def rinit(self, params: Params, t0: float, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` initial states at time t0, shape (size, state_dim)."""

    @abc.abstractmethod
    def rprocess(
        self,
        states: np.ndarray,
        params: Params,
        t_from: float,
        t_to: float,
        rng: np.random.Generator,
    ) -> np.ndarray:
        """Advance every row of `states` from t_from to t_to."""

    @abc.abstractmethod
    def dmeasure(self, obs: Observation, states: np.ndarray, params: Params) -> np.ndarray:
        """Log measurement density of `obs` for each state row. Never NaN;
        -inf only for structurally impossible observations."""

    def dmeasure_by_label(
        self, obs: Observation, states: np.ndarray, params: Params
    ) -> dict[str, np.ndarray]:
        """Per-label log densities, for models whose measurement factorizes."""
        raise NotImplementedError(f"{type(self).__name__} has no per-label decomposition")


class SdeModel(PompModel):
    """POMP whose dynamics come from Euler steps of an SDE.

    Subclasses implement `step`; `rprocess` subdivides the interval into
    equal Euler steps no longer than `dt_max`.
    """

    dt_max: float = 0.1

    @abc.abstractmethod
    def step(
        self,
        states: np.ndarray,
        params: Params,
        t: float,
        dt: float,
        rng: np.random.Generator,
        diag: dict | None = None,
    ) -> np.ndarray:
        """One Euler increment of length dt starting at time t."""

    def rprocess(self, states, params, t_from, t_to, rng, diag=None):
        return rprocess_subdivided(self, states, params, t_from, t_to, self.dt_max, rng, diag=diag)


def n_substeps(span: float, dt_max: float) -> int:
    """Number of equal Euler steps covering `span` without exceeding dt_max."""
    if span <= 0:
        raise ValueError(f"time span must be positive, got {span}")
    if dt_max <= 0:
        raise ValueError(f"dt_max must be positive, got {dt_max}")
    # tolerance keeps span == k*dt_max at exactly k steps despite rounding
    return max(1, math.ceil(span / dt_max - 1e-9))


def rprocess_subdivided(
    model: SdeModel,
    states: np.ndarray,
    params: Params,
    t_from: float,
    t_to: float,
    dt_max: float,
    rng: np.random.Generator,
    diag: dict | None = None,
) -> np.ndarray:
    """Advance states by repeated equal Euler steps of length <= dt_max."""
    k = n_substeps(t_to - t_from, dt_max)
    dt = (t_to - t_from) / k
    t = t_from
    # overflow surfaces through the finite check below, not as warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(k):
            states = model.step(states, params, t, dt, rng, diag=diag)
            t += dt
    if not np.all(np.isfinite(states)):
        bad = np.argwhere(~np.isfinite(states))
        label = model.state_labels[int(bad[0, 1])]
        raise NumericsError(f"nonfinite state in compartment {label!r} near t={t:.4g}")
    return states


def simulate(
    model: PompModel,
    params: Params,
    times,
    n_sims: int,
    rng: np.random.Generator,
    t0: float = 0.0,
    diag: dict | None = None,
) -> np.ndarray:
    """Simulate n_sims trajectories, recorded at `times` (all > t0).

    Returns an array of shape (n_sims, len(times), state_dim).
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(np.diff(times) <= 0) or times[0] <= t0:
        raise ValueError("times must be strictly increasing and all > t0")
    states = model.rinit(params, t0, rng, n_sims)
    out = np.empty((n_sims, times.size, model.state_dim))
    t_prev = t0
    for j, t in enumerate(times):
        if isinstance(model, SdeModel):
            states = model.rprocess(states, params, t_prev, t, rng, diag=diag)
        else:
            states = model.rprocess(states, params, t_prev, t, rng)
        out[:, j, :] = states
        t_prev = t
    return out
