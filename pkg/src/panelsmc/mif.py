"""Iterated filtering for panels.

Each particle carries a full parameter vector alongside its latent
state. The whole vector takes a Gaussian perturbation on the estimation
scale when a unit's filtering starts; while that unit's observations are
processed, only the shared block and that unit's specific block keep
moving, and resampling selects states and parameters with the same
indices. The specific blocks of the other units are either reselected
with those indices too (the plain panel iterated filter) or left
untouched per particle (the marginalized variant). Perturbation sds
shrink geometrically by a factor rho per iteration.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NumericsError
from .panel import PanelDataset, PanelParams, PanelPomp, _check_panel_data, panel_loglik
from .params import (
    ParamSpec,
    ParamVector,
    inverse_transform_array,
    perturbation_sds,
    to_estimation_scale,
)
from .pfilter import LOG_WEIGHT_FLOOR, systematic_resample
from .rngs import derive_rng, mix_seed

__all__ = [
    "CoolingSchedule",
    "MifSettings",
    "ParamSwarm",
    "SearchRecord",
    "StagedSearchResult",
    "cooling_factor",
    "gaussian_perturbation",
    "pif_run",
    "mif2_single",
    "staged_search",
]


@dataclass(frozen=True)
class CoolingSchedule:
    """Geometric cooling: the perturbation sd at iteration m is rho**m times
    the base sd (so the variance shrinks like rho**(2m))."""

    rho: float
    kind: str = "geometric"

    def __post_init__(self):
        if self.kind != "geometric":
            raise ValueError(f"unknown cooling kind {self.kind!r}")
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must be in (0, 1], got {self.rho}")


def cooling_factor(schedule: CoolingSchedule, m: int) -> float:
    """Sd multiplier at iteration m (m=0 means no cooling yet)."""
    if m < 0:
        raise ValueError("iteration index must be >= 0")
    return float(schedule.rho**m)


@dataclass(frozen=True)
class MifSettings:
    """Tuning for one iterated-filtering run.

    Perturbation sds come from each parameter's spec unless overridden:
    base_sd replaces the sd of every non-fixed parameter, sd_overrides
    pins individual names. Fixed parameters always have sd 0.
    """

    J: int
    M: int
    schedule: CoolingSchedule = CoolingSchedule(rho=0.7 ** (1 / 50))
    marginalize: bool = False
    base_sd: float | None = None
    sd_overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.J < 2:
            raise ValueError("J must be >= 2")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        object.__setattr__(self, "sd_overrides", dict(self.sd_overrides))

    def resolve_sds(self, spec: Sequence[ParamSpec]) -> np.ndarray:
        sds = perturbation_sds(spec)
        if self.base_sd is not None:
            if self.base_sd < 0:
                raise ValueError("base_sd must be >= 0")
            sds = np.where(sds > 0, self.base_sd, 0.0)
        for j, s in enumerate(spec):
            if s.name in self.sd_overrides and s.role != "fixed":
                sds[j] = self.sd_overrides[s.name]
        return sds


def gaussian_perturbation(
    values: np.ndarray, sds: np.ndarray, factor: float, rng: np.random.Generator
) -> np.ndarray:
    """Add N(0, (factor*sd)^2) noise columnwise on the estimation scale."""
    return values + rng.standard_normal(values.shape) * (np.asarray(sds) * factor)


class ParamSwarm:
    """J parameter particles, stored blockwise on the estimation scale."""

    def __init__(
        self,
        shared_spec: Sequence[ParamSpec],
        specific_spec: Sequence[ParamSpec],
        unit_ids: Sequence[str],
        phi: np.ndarray,
        psi: Mapping[str, np.ndarray],
    ):
        self.shared_spec = tuple(shared_spec)
        self.specific_spec = tuple(specific_spec)
        self.unit_ids = tuple(unit_ids)
        self.phi = np.asarray(phi, dtype=float)
        self.psi = {u: np.asarray(psi[u], dtype=float) for u in self.unit_ids}
        J = len(self.phi)
        if any(len(a) != J for a in self.psi.values()):
            raise ValueError("all parameter blocks must hold the same number of particles")

    @property
    def size(self) -> int:
        return len(self.phi)

    @classmethod
    def from_point(cls, panel: PanelPomp, params: PanelParams, J: int) -> "ParamSwarm":
        phi0 = to_estimation_scale(params.shared)
        psi = {}
        for uid in panel.unit_ids:
            if uid not in params.specific:
                raise ValueError(f"params missing unit-specific block for {uid!r}")
            psi[uid] = np.tile(to_estimation_scale(params.specific[uid]), (J, 1))
        return cls(panel.shared_spec, panel.specific_spec, panel.unit_ids,
                   np.tile(phi0, (J, 1)), psi)

    def copy(self) -> "ParamSwarm":
        return ParamSwarm(
            self.shared_spec,
            self.specific_spec,
            self.unit_ids,
            self.phi.copy(),
            {u: a.copy() for u, a in self.psi.items()},
        )

    def particle(self, j: int) -> PanelParams:
        shared = _naturalize_vector(self.phi[j], self.shared_spec)
        specific = {
            u: _naturalize_vector(self.psi[u][j], self.specific_spec) for u in self.unit_ids
        }
        return PanelParams(shared=shared, specific=specific)

    def particles(self) -> list[PanelParams]:
        return [self.particle(j) for j in range(self.size)]

    def mean_params(self) -> PanelParams:
        """Swarm mean taken on the estimation scale, then mapped back."""
        shared = _naturalize_vector(self.phi.mean(axis=0), self.shared_spec)
        specific = {
            u: _naturalize_vector(self.psi[u].mean(axis=0), self.specific_spec)
            for u in self.unit_ids
        }
        return PanelParams(shared=shared, specific=specific)


def _naturalize_vector(v: np.ndarray, spec: tuple[ParamSpec, ...]) -> ParamVector:
    nat = inverse_transform_array(v, spec)
    return ParamVector({s.name: float(nat[j]) for j, s in enumerate(spec)}, spec)


def _natural_columns(
    phi: np.ndarray,
    psi_u: np.ndarray,
    shared_spec: tuple[ParamSpec, ...],
    specific_spec: tuple[ParamSpec, ...],
) -> dict[str, np.ndarray]:
    """Per-particle natural-scale parameter columns for model calls."""
    out: dict[str, np.ndarray] = {}
    nat_phi = inverse_transform_array(phi, shared_spec)
    for j, s in enumerate(shared_spec):
        out[s.name] = nat_phi[:, j]
    if specific_spec:
        nat_psi = inverse_transform_array(psi_u, specific_spec)
        for j, s in enumerate(specific_spec):
            out[s.name] = nat_psi[:, j]
    return out


@dataclass
class SearchRecord:
    """Trace and final swarm of one iterated-filtering run."""

    param_names: tuple[str, ...]
    trace_mean: np.ndarray  # (M, P) on the estimation scale
    trace_sd: np.ndarray
    final: ParamSwarm
    settings: MifSettings
    n_fail: int = 0
    index_history: list | None = None
    swarm_history: list | None = None
    loglik_evals: dict | None = None

    def mean_params(self) -> PanelParams:
        return self.final.mean_params()

    @property
    def final_swarm(self) -> list[PanelParams]:
        return self.final.particles()


def _trace_names(swarm: ParamSwarm) -> tuple[str, ...]:
    names = [s.name for s in swarm.shared_spec]
    for u in swarm.unit_ids:
        names.extend(f"{s.name}[{u}]" for s in swarm.specific_spec)
    return tuple(names)


def _trace_row(swarm: ParamSwarm) -> tuple[np.ndarray, np.ndarray]:
    cols = [swarm.phi] + [swarm.psi[u] for u in swarm.unit_ids]
    stacked = np.concatenate(cols, axis=1) if cols else np.empty((swarm.size, 0))
    return stacked.mean(axis=0), stacked.std(axis=0)


def pif_run(
    panel: PanelPomp,
    data: PanelDataset,
    start: PanelParams | ParamSwarm,
    settings: MifSettings,
    rng: np.random.Generator,
    *,
    record_swarms: bool = False,
    record_indices: bool = False,
) -> SearchRecord:
    """Run M panel filtering iterations, perturbing and reselecting parameters.

    With settings.marginalize the specific blocks of units other than the
    one currently being filtered keep their per-particle values through
    resampling; otherwise they are reindexed along with everything else.
    """
    _check_panel_data(panel, data)
    swarm = start.copy() if isinstance(start, ParamSwarm) else ParamSwarm.from_point(
        panel, start, settings.J
    )
    if swarm.size != settings.J:
        raise ValueError(f"start swarm has {swarm.size} particles, settings ask for {settings.J}")
    J = settings.J
    sds_phi = settings.resolve_sds(swarm.shared_spec)
    sds_psi = settings.resolve_sds(swarm.specific_spec)

    names = _trace_names(swarm)
    trace_mean = np.empty((settings.M, len(names)))
    trace_sd = np.empty((settings.M, len(names)))
    index_history: list | None = [] if record_indices else None
    swarm_history: list | None = [swarm.copy()] if record_swarms else None
    n_fail = 0

    units = [u for u in panel.units if u.unit_id in set(data.unit_ids)]
    for m in range(1, settings.M + 1):
        factor = cooling_factor(settings.schedule, m)
        for u in units:
            uid = u.unit_id
            obs_u = data.obs(uid)
            # unit initialization perturbs the full parameter vector (phi and
            # every specific block); within the time loop only phi and psi_u
            # move. Keeping the off-unit blocks diffusing slowly preserves
            # their particle diversity through the reindexing steps.
            swarm.phi = gaussian_perturbation(swarm.phi, sds_phi, factor, rng)
            for other in swarm.unit_ids:
                if other != uid:
                    swarm.psi[other] = gaussian_perturbation(
                        swarm.psi[other], sds_psi, factor, rng
                    )
            psi_u = gaussian_perturbation(swarm.psi[uid], sds_psi, factor, rng)
            params_nat = _natural_columns(swarm.phi, psi_u, swarm.shared_spec, swarm.specific_spec)
            states = u.model.rinit(params_nat, u.t0, rng, J)
            t_prev = u.t0
            for n, ob in enumerate(obs_u):
                swarm.phi = gaussian_perturbation(swarm.phi, sds_phi, factor, rng)
                psi_u = gaussian_perturbation(psi_u, sds_psi, factor, rng)
                params_nat = _natural_columns(
                    swarm.phi, psi_u, swarm.shared_spec, swarm.specific_spec
                )
                states = np.asarray(
                    u.model.rprocess(states, params_nat, t_prev, ob.time, rng), dtype=float
                )
                logw = np.asarray(u.model.dmeasure(ob, states, params_nat), dtype=float)
                if np.any(np.isnan(logw)):
                    raise NumericsError(
                        f"weight collapse at iteration {m}, unit {uid!r}, observation {n}"
                    )
                if np.max(logw) < LOG_WEIGHT_FLOOR:
                    n_fail += 1
                    w = np.full(J, 1.0 / J)
                else:
                    logw = np.maximum(logw, LOG_WEIGHT_FLOOR)
                    w = np.exp(logw - np.max(logw))
                    w /= w.sum()
                k = systematic_resample(w, rng)
                states = states[k]
                swarm.phi = swarm.phi[k]
                psi_u = psi_u[k]
                if not settings.marginalize:
                    for other in swarm.unit_ids:
                        if other != uid:
                            swarm.psi[other] = swarm.psi[other][k]
                if index_history is not None:
                    index_history.append((m, uid, n, k.copy()))
                t_prev = ob.time
            swarm.psi[uid] = psi_u
        trace_mean[m - 1], trace_sd[m - 1] = _trace_row(swarm)
        if swarm_history is not None:
            swarm_history.append(swarm.copy())

    return SearchRecord(
        param_names=names,
        trace_mean=trace_mean,
        trace_sd=trace_sd,
        final=swarm,
        settings=settings,
        n_fail=n_fail,
        index_history=index_history,
        swarm_history=swarm_history,
    )


def mif2_single(
    model,
    observations,
    start: ParamVector,
    settings: MifSettings,
    rng: np.random.Generator,
    *,
    unit_id: str = "u1",
    t0: float = 0.0,
) -> SearchRecord:
    """Iterated filtering for a single unit (the U=1 panel special case,
    where the marginalized and plain variants coincide)."""
    panel = PanelPomp(
        [(unit_id, model, t0)], shared_spec=start.spec, specific_spec=()
    )
    data = PanelDataset({unit_id: tuple(observations)})
    params = PanelParams(shared=start, specific={unit_id: ParamVector({}, ())})
    return pif_run(panel, data, params, settings, rng)


@dataclass
class StageSummary:
    stage: int
    logliks: np.ndarray
    ses: np.ndarray
    selected: np.ndarray  # candidate indices kept for the next stage


@dataclass
class StagedSearchResult:
    best_params: PanelParams
    loglik: float
    se: float
    stages: list[StageSummary]
    final_records: list[SearchRecord]
    candidates: list[PanelParams]


def _run_search_job(job):
    panel, data, start, settings, seed_keys = job
    rng = derive_rng(*seed_keys)
    rec = pif_run(panel, data, start, settings, rng)
    return rec


def staged_search(
    panel: PanelPomp,
    data: PanelDataset,
    initial_draws: Sequence[PanelParams],
    stages: Sequence[MifSettings],
    selection_fraction: float = 0.25,
    seed: int = 0,
    *,
    eval_reps: int = 5,
    workers: int = 1,
) -> StagedSearchResult:
    """Multi-stage search: run one iterated filter per draw, evaluate the
    candidates by replicated particle filtering, keep the top fraction and
    repopulate for the next stage. Returns the best evaluated candidate.
    """
    draws = list(initial_draws)
    K = len(draws)
    if K < 4:
        raise ValueError("need at least 4 initial draws")
    if not 0 < selection_fraction <= 1:
        raise ValueError("selection_fraction must be in (0, 1]")
    if not stages:
        raise ValueError("need at least one stage")

    starts = draws
    history: list[StageSummary] = []
    records: list[SearchRecord] = []
    cands: list[PanelParams] = []
    logliks = ses = None
    for s, settings in enumerate(stages):
        jobs = [
            (panel, data, starts[k], settings, (seed, "search", s, k)) for k in range(K)
        ]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                records = list(ex.map(_run_search_job, jobs))
        else:
            records = [_run_search_job(j) for j in jobs]
        cands = [rec.mean_params() for rec in records]
        evals = [
            panel_loglik(
                panel, data, cand, J=settings.J, n_reps=eval_reps,
                seed=mix_seed(seed, "eval", s, k), workers=workers,
            )
            for k, cand in enumerate(cands)
        ]
        logliks = np.array([e.total for e in evals])
        ses = np.array([e.se for e in evals])
        order = np.argsort(-logliks, kind="stable")
        n_keep = max(1, int(np.floor(K * selection_fraction + 1e-9)))
        selected = order[:n_keep]
        history.append(StageSummary(stage=s, logliks=logliks, ses=ses, selected=selected))
        starts = [cands[selected[i % n_keep]] for i in range(K)]

    best = int(np.argmax(logliks))
    for rec, ll in zip(records, logliks):
        rec.loglik_evals = {"loglik": float(ll)}
    return StagedSearchResult(
        best_params=cands[best],
        loglik=float(logliks[best]),
        se=float(ses[best]),
        stages=history,
        final_records=records,
        candidates=cands,
    )
