"""Panels of independent POMP units linked by shared parameters.

Unit likelihoods multiply (latent processes are independent across
units), so the panel log-likelihood is the sum of per-unit estimates.
Each (unit, replicate) particle filter gets its own derived RNG stream
and the reduction runs in a fixed unit order, which makes totals
bit-stable across worker counts and unit orderings.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, FilterFailureError
from .params import ParamSpec, ParamVector
from .pfilter import pfilter
from .pomp import Observation, PompModel
from .rngs import derive_unit_rng

__all__ = [
    "PanelUnit",
    "PanelPomp",
    "PanelDataset",
    "PanelParams",
    "PanelLoglik",
    "assemble_unit_params",
    "panel_loglik",
    "log_mean_exp",
    "log_mean_exp_se",
]


def log_mean_exp(x) -> float:
    """log of the mean of exp(x); the natural-scale combiner for replicate
    log-likelihood estimates."""
    x = np.asarray(x, dtype=float)
    m = float(np.max(x))
    return m + float(np.log(np.mean(np.exp(x - m))))


def log_mean_exp_se(x) -> float:
    """Jackknife standard error of log_mean_exp over replicates."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return 0.0
    jack = np.array([log_mean_exp(np.delete(x, i)) for i in range(n)])
    return float((n - 1) * np.std(jack, ddof=1) / np.sqrt(n))


@dataclass(frozen=True)
class PanelUnit:
    unit_id: str
    model: PompModel
    t0: float = 0.0


class PanelPomp:
    """Ordered collection of unit models plus the parameter split.

    Units are kept in ascending unit_id order; shared and unit-specific
    parameter names must be disjoint so assembly is unambiguous.
    """

    def __init__(
        self,
        units: Sequence[PanelUnit | tuple],
        shared_spec: Sequence[ParamSpec],
        specific_spec: Sequence[ParamSpec] = (),
    ):
        units = [u if isinstance(u, PanelUnit) else PanelUnit(*u) for u in units]
        ids = [u.unit_id for u in units]
        if len(set(ids)) != len(ids):
            raise ValueError("unit_ids must be unique")
        if not units:
            raise ValueError("a panel needs at least one unit")
        self.units: tuple[PanelUnit, ...] = tuple(sorted(units, key=lambda u: u.unit_id))
        self.shared_spec: tuple[ParamSpec, ...] = tuple(shared_spec)
        self.specific_spec: tuple[ParamSpec, ...] = tuple(specific_spec)
        shared_names = {s.name for s in self.shared_spec}
        specific_names = {s.name for s in self.specific_spec}
        clash = shared_names & specific_names
        if clash:
            raise ValueError(f"shared and unit-specific parameter names overlap: {sorted(clash)}")

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(u.unit_id for u in self.units)

    def unit(self, unit_id: str) -> PanelUnit:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise KeyError(f"unknown unit {unit_id!r}")

    @property
    def combined_spec(self) -> tuple[ParamSpec, ...]:
        return self.shared_spec + self.specific_spec


class PanelDataset:
    """Per-unit observation series with strictly increasing times."""

    def __init__(
        self,
        observations: Mapping[str, Sequence[Observation]],
        validation=None,
    ):
        self._obs: dict[str, tuple[Observation, ...]] = {}
        for uid, seq in observations.items():
            seq = tuple(seq)
            times = [o.time for o in seq]
            if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
                raise DataError(f"unit {uid!r}: observation times must be strictly increasing")
            self._obs[str(uid)] = seq
        # side table of validation-only measurements, never scored
        self.validation = validation

    @property
    def unit_ids(self) -> tuple[str, ...]:
        return tuple(self._obs)

    def obs(self, unit_id: str) -> tuple[Observation, ...]:
        try:
            return self._obs[unit_id]
        except KeyError:
            raise DataError(f"no observations for unit {unit_id!r}") from None

    def n_obs(self, unit_id: str) -> int:
        return len(self.obs(unit_id))

    def times(self, unit_id: str) -> np.ndarray:
        return np.array([o.time for o in self.obs(unit_id)])

    def items(self):
        return self._obs.items()

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        if self.unit_ids != other.unit_ids:
            return False
        for uid in self.unit_ids:
            a, b = self.obs(uid), other.obs(uid)
            if len(a) != len(b):
                return False
            for oa, ob in zip(a, b):
                if (oa.time, oa.counts, oa.missing) != (ob.time, ob.counts, ob.missing):
                    return False
        return True


@dataclass(frozen=True)
class PanelParams:
    """Shared block plus one unit-specific block per unit."""

    shared: ParamVector
    specific: Mapping[str, ParamVector]

    def __post_init__(self):
        object.__setattr__(self, "specific", dict(self.specific))

    def unit_ids(self) -> tuple[str, ...]:
        return tuple(self.specific)


def assemble_unit_params(params: PanelParams, unit_id: str) -> ParamVector:
    """Concatenate (shared, unit-specific) into the vector a unit model takes."""
    if unit_id not in params.specific:
        raise KeyError(f"no unit-specific parameters for unit {unit_id!r}")
    psi = params.specific[unit_id]
    clash = set(params.shared.values) & set(psi.values)
    if clash:
        raise ValueError(f"shared and unit-specific names overlap: {sorted(clash)}")
    values = dict(params.shared.values)
    values.update(psi.values)
    return ParamVector(values, params.shared.spec + psi.spec)


@dataclass
class PanelLoglik:
    total: float
    per_unit: dict[str, float]
    se: float
    per_unit_se: dict[str, float]
    n_fail: dict[str, int]


def _check_panel_data(panel: PanelPomp, data: PanelDataset) -> None:
    extra = set(data.unit_ids) - set(panel.unit_ids)
    if extra:
        raise DataError(f"data contains units not in the panel: {sorted(extra)}")
    for u in panel.units:
        if u.unit_id in data.unit_ids:
            t = data.times(u.unit_id)
            if t.size and t[0] <= u.t0:
                raise DataError(
                    f"unit {u.unit_id!r}: first observation at t={t[0]} is not after t0={u.t0}"
                )


def _unit_rep_loglik(job):
    (model, obs, values, J, seed, unit_id, rep, allow_fail, t0) = job
    rng = derive_unit_rng(seed, unit_id, rep)
    try:
        res = pfilter(model, values, obs, J, rng, t0=t0, allow_fail=allow_fail)
    except FilterFailureError as err:
        raise FilterFailureError(
            f"unit {unit_id!r}: {err}", unit_id=unit_id, step=err.step, time=err.time
        ) from err
    return unit_id, rep, res.loglik, res.n_fail, res.first_fail_step


def panel_loglik(
    panel: PanelPomp,
    data: PanelDataset,
    params: PanelParams,
    J: int,
    n_reps: int = 1,
    seed: int = 0,
    workers: int = 1,
    allow_fail: bool = True,
) -> PanelLoglik:
    """Replicated particle-filter estimate of the panel log-likelihood.

    Per unit, n_reps independent filter estimates are combined by
    log-mean-exp; units then sum. The standard error is the per-unit
    jackknife SE combined in quadrature. RNG streams are keyed by
    (seed, unit_id, replicate), so the result is invariant to unit
    ordering and worker count.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    _check_panel_data(panel, data)
    units = [u for u in panel.units if u.unit_id in set(data.unit_ids)]
    jobs = []
    for u in units:
        values = assemble_unit_params(params, u.unit_id).values
        for rep in range(n_reps):
            jobs.append((u.model, data.obs(u.unit_id), values, J, seed, u.unit_id, rep, allow_fail, u.t0))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_unit_rep_loglik, jobs))
    else:
        results = [_unit_rep_loglik(j) for j in jobs]

    by_unit: dict[str, dict[int, float]] = {u.unit_id: {} for u in units}
    fails: dict[str, list[int]] = {u.unit_id: [] for u in units}
    first_fail: dict[str, int | None] = {u.unit_id: None for u in units}
    for unit_id, rep, ll, n_fail, fail_step in results:
        by_unit[unit_id][rep] = ll
        fails[unit_id].append(n_fail)
        if fail_step is not None and first_fail[unit_id] is None:
            first_fail[unit_id] = fail_step

    per_unit: dict[str, float] = {}
    per_unit_se: dict[str, float] = {}
    n_fail_total: dict[str, int] = {}
    for u in units:
        reps = np.array([by_unit[u.unit_id][r] for r in range(n_reps)])
        if all(f > 0 for f in fails[u.unit_id]):
            raise FilterFailureError(
                f"unit {u.unit_id!r}: filtering failed in every replicate, "
                f"first at observation index {first_fail[u.unit_id]}",
                unit_id=u.unit_id,
                step=first_fail[u.unit_id],
            )
        per_unit[u.unit_id] = log_mean_exp(reps)
        per_unit_se[u.unit_id] = log_mean_exp_se(reps)
        n_fail_total[u.unit_id] = int(sum(fails[u.unit_id]))

    total = float(np.sum([per_unit[uid] for uid in sorted(per_unit)]))
    se = float(np.sqrt(np.sum([per_unit_se[uid] ** 2 for uid in sorted(per_unit)])))
    return PanelLoglik(total=total, per_unit=per_unit, se=se, per_unit_se=per_unit_se, n_fail=n_fail_total)
