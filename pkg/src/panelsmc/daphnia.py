"""Mesocosm host-parasite-food model family.

The flagship model tracks, per liter of mesocosm water, susceptible (S),
infected (I) and juvenile (J) hosts of a native and an invasive species,
free-floating parasite spores (P, thousands per liter) and algal food
(F, millions of cells per liter). Dynamics are an Ito SDE integrated by
Euler steps with multiplicative Gaussian noise; each compartment is
clamped at zero after every step.

Reduced variants (one species, no parasite, no juveniles) run through the
same two-species stepper with the missing blocks pinned to zero, which
makes reduction exact: the surviving compartments follow bit-identical
trajectories under the same RNG stream. The no-juvenile model and the
gamma-noise model have structurally different equations and carry their
own steppers.

Counts are scored against latent densities with negative binomial
measurement noise; the sampled volume is one liter so densities and
counts share a scale. Juvenile counts are validation-only and are never
scored.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .measures import nbinom_logpmf
from .params import ParamSpec, ParamVector
from .pomp import Observation, SdeModel

__all__ = [
    "FULL_STATE_LABELS",
    "GaussianMesocosmModel",
    "NoJuvenileModel",
    "GammaFlowModel",
    "model_variant",
    "default_params",
    "initial_densities",
    "MODEL_NAMES",
    "TREATMENTS",
    "treatment_preset",
]

FULL_STATE_LABELS = ("S_n", "I_n", "J_n", "S_i", "I_i", "J_i", "P", "F")

# experimental constants: 15 L mesocosms, 45 founding adults (35 native +
# 10 invasive in mixed treatments), 2.5e8 algal cells, 25 spores per mL
VOLUME_L = 15.0
FOOD_INIT = 2.5e8 / VOLUME_L / 1e6
SPORES_INIT = 25.0
MIXED_NATIVE = 35.0 / VOLUME_L
MIXED_INVASIVE = 10.0 / VOLUME_L
SINGLE_HOST = 45.0 / VOLUME_L

_NOISE_COLS = (
    "noise_sus_n", "noise_inf_n", "noise_juv_n",
    "noise_sus_i", "noise_inf_i", "noise_juv_i",
    "noise_spore", "noise_food",
)


def _col(params, name, J):
    return np.broadcast_to(np.asarray(params[name], dtype=float), (J,))


def _two_species_drift(x: np.ndarray, p: Mapping) -> np.ndarray:
    """Deterministic part of the full two-species dynamics."""
    Sn, In, Jn, Si, Ii, Ji, P, F = (x[:, j] for j in range(8))
    delta = p["sample_rate"]
    xi = p["filt_ratio_inf"]
    xij = p["filt_ratio_juv"]

    inf_n = p["infect_n"] * p["filt_n"]
    inf_i = p["infect_i"] * p["filt_i"]

    dSn = p["mature_n"] * Jn - (p["mort_sus_n"] + inf_n * P + delta) * Sn
    dIn = inf_n * Sn * P - (p["mort_inf_n"] + delta) * In
    dJn = p["birth_n"] * p["filt_n"] * F * Sn - (p["mort_juv_n"] + delta + p["mature_n"]) * Jn
    dSi = p["mature_i"] * Ji - (p["mort_sus_i"] + inf_i * P + delta) * Si
    dIi = inf_i * Si * P - (p["mort_inf_i"] + delta) * Ii
    dJi = p["birth_i"] * p["filt_i"] * F * Si - (p["mort_juv_i"] + delta + p["mature_i"]) * Ji
    dP = (
        p["spores_per_inf_n"] * p["mort_inf_n"] * In
        - p["filt_n"] * (Sn + xi * In) * P
        + p["spores_per_inf_i"] * p["mort_inf_i"] * Ii
        - p["filt_i"] * (Si + xi * Ii) * P
        - p["spore_decay"] * P
    )
    dF = (
        -p["filt_n"] * F * (Sn + xij * Jn + xi * In)
        - p["filt_i"] * F * (Si + xij * Ji + xi * Ii)
        + p["food_refill"]
    )
    return np.stack([dSn, dIn, dJn, dSi, dIi, dJi, dP, dF], axis=1)


def _two_species_step(x, p, dt, rng, diag=None):
    """One Euler increment with multiplicative Gaussian noise, then clamp."""
    J = x.shape[0]
    drift = _two_species_drift(x, p)
    sds = np.stack([_col(p, name, J) for name in _NOISE_COLS], axis=1)
    z = rng.standard_normal(x.shape)
    out = x + drift * dt + x * (z * sds * np.sqrt(dt))
    if diag is not None:
        diag["clamp_events"] = diag.get("clamp_events", 0) + int(np.count_nonzero(out < 0))
    return np.maximum(out, 0.0)


class _MesocosmBase(SdeModel):
    """Shared plumbing: constant experimental initial state, NB measurement."""

    def __init__(self, name, state_labels, obs_map, param_spec, init_state, dt_max=0.1):
        self.name = name
        self.state_labels = tuple(state_labels)
        self.obs_map = tuple(obs_map)  # (obs label, state label, dispersion param)
        self.obs_labels = tuple(lbl for lbl, _, _ in self.obs_map)
        self.param_spec = tuple(param_spec)
        self.init_state = np.asarray(init_state, dtype=float)
        self.dt_max = float(dt_max)
        if self.init_state.shape != (len(self.state_labels),):
            raise ValueError("init_state length must match state_labels")
        self._obs_idx = {
            lbl: (self.state_labels.index(st), disp) for lbl, st, disp in self.obs_map
        }

    @property
    def param_names(self):
        return tuple(s.name for s in self.param_spec)

    def rinit(self, params, t0, rng, size):
        return np.tile(self.init_state, (size, 1))

    def dmeasure(self, obs: Observation, states, params):
        total = np.zeros(states.shape[0])
        for lbl, (idx, disp) in self._obs_idx.items():
            if lbl in obs.counts:
                total = total + nbinom_logpmf(obs.counts[lbl], states[:, idx], params[disp])
        return total

    def dmeasure_by_label(self, obs: Observation, states, params):
        out = {}
        for lbl, (idx, disp) in self._obs_idx.items():
            if lbl in obs.counts:
                out[lbl] = nbinom_logpmf(obs.counts[lbl], states[:, idx], params[disp])
        return out

    def with_init(self, init_state) -> "_MesocosmBase":
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.init_state = np.asarray(init_state, dtype=float)
        if new.init_state.shape != (len(self.state_labels),):
            raise ValueError("init_state length must match state_labels")
        return new


class GaussianMesocosmModel(_MesocosmBase):
    """Gaussian-noise family. Reduced variants view a subset of the full
    state and pin the remaining parameters to zero, so they share the full
    stepper and its RNG consumption exactly."""

    def __init__(self, name, state_labels, obs_map, param_spec, init_state,
                 full_param_map, dt_max=0.1):
        super().__init__(name, state_labels, obs_map, param_spec, init_state, dt_max)
        # full parameter name -> own parameter name, or a pinned constant
        self.full_param_map = dict(full_param_map)
        self._view = np.array([FULL_STATE_LABELS.index(lbl) for lbl in self.state_labels])

    def _full_params(self, params, J):
        full = {}
        for name, src in self.full_param_map.items():
            full[name] = params[src] if isinstance(src, str) else src
        return full

    def step(self, states, params, t, dt, rng, diag=None):
        J = states.shape[0]
        full = np.zeros((J, 8))
        full[:, self._view] = states
        full = _two_species_step(full, self._full_params(params, J), dt, rng, diag=diag)
        return full[:, self._view]


class NoJuvenileModel(_MesocosmBase):
    """Two-species variant without an age structure: food intake feeds adult
    density growth directly and susceptible adults carry no dynamic noise."""

    def step(self, states, params, t, dt, rng, diag=None):
        J = states.shape[0]
        Sn, In, Si, Ii, P, F = (states[:, j] for j in range(6))
        p = params
        delta = p["sample_rate"]
        xi = p["filt_ratio_inf"]
        inf_n = p["infect_n"] * p["filt_n"]
        inf_i = p["infect_i"] * p["filt_i"]

        dSn = p["birth_n"] * p["filt_n"] * F * Sn - (p["mort_sus_n"] + inf_n * P + delta) * Sn
        dIn = inf_n * Sn * P - (p["mort_inf_n"] + delta) * In
        dSi = p["birth_i"] * p["filt_i"] * F * Si - (p["mort_sus_i"] + inf_i * P + delta) * Si
        dIi = inf_i * Si * P - (p["mort_inf_i"] + delta) * Ii
        dP = (
            p["spores_per_inf_n"] * p["mort_inf_n"] * In
            - p["filt_n"] * (Sn + xi * In) * P
            + p["spores_per_inf_i"] * p["mort_inf_i"] * Ii
            - p["filt_i"] * (Si + xi * Ii) * P
            - p["spore_decay"] * P
        )
        dF = (
            -p["filt_n"] * F * (Sn + xi * In)
            - p["filt_i"] * F * (Si + xi * Ii)
            + p["food_refill"]
        )
        drift = np.stack([dSn, dIn, dSi, dIi, dP, dF], axis=1)
        sds = np.stack(
            [np.zeros(J), _col(p, "noise_inf_n", J), np.zeros(J), _col(p, "noise_inf_i", J),
             _col(p, "noise_spore", J), _col(p, "noise_food", J)],
            axis=1,
        )
        z = rng.standard_normal(states.shape)
        out = states + drift * dt + states * (z * sds * np.sqrt(dt))
        if diag is not None:
            diag["clamp_events"] = diag.get("clamp_events", 0) + int(np.count_nonzero(out < 0))
        return np.maximum(out, 0.0)


def gamma_increment(sigma, dt, rng, size):
    """Gamma multiplier for a flow over a step of length dt.

    Shape dt/sigma^2 and scale sigma^2 give mean dt and variance
    sigma^2 * dt; sigma == 0 degenerates to the deterministic dt.
    """
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), size)
    out = np.full(size, float(dt))
    pos = sig > 0
    if np.any(pos):
        s2 = sig[pos] ** 2
        out[pos] = rng.gamma(shape=dt / s2, scale=s2)
    return out


def gamma_flow_step(states, p, dt, rng, diag=None, return_increments=False):
    """One step of the gamma-noise variant.

    The infection (S->I), death-with-spore-release (I->P) and birth (S->J
    recruitment) flows are each multiplied by a gamma increment with mean
    dt; the same draw is applied wherever that flow appears, so whatever
    leaves a source compartment arrives at its destination. Food keeps a
    Gaussian increment.
    """
    J = states.shape[0]
    Sn, In, Jn, Si, Ii, Ji, P, F = (states[:, j] for j in range(8))
    delta = p["sample_rate"]
    xi = p["filt_ratio_inf"]
    xij = p["filt_ratio_juv"]

    g_si_n = gamma_increment(p["noise_si_n"], dt, rng, (J,))
    g_si_i = gamma_increment(p["noise_si_i"], dt, rng, (J,))
    g_ip_n = gamma_increment(p["noise_ip_n"], dt, rng, (J,))
    g_ip_i = gamma_increment(p["noise_ip_i"], dt, rng, (J,))
    g_sj_n = gamma_increment(p["noise_sj_n"], dt, rng, (J,))
    g_sj_i = gamma_increment(p["noise_sj_i"], dt, rng, (J,))

    flow_si_n = p["infect_n"] * p["filt_n"] * P * Sn * g_si_n
    flow_si_i = p["infect_i"] * p["filt_i"] * P * Si * g_si_i
    flow_ip_n = p["mort_inf_n"] * In * g_ip_n
    flow_ip_i = p["mort_inf_i"] * Ii * g_ip_i
    flow_sj_n = p["birth_n"] * p["filt_n"] * F * Sn * g_sj_n
    flow_sj_i = p["birth_i"] * p["filt_i"] * F * Si * g_sj_i

    new_Sn = Sn + p["mature_n"] * Jn * dt - (p["mort_sus_n"] + delta) * Sn * dt - flow_si_n
    new_In = In + flow_si_n - flow_ip_n - delta * In * dt
    new_Jn = Jn + flow_sj_n - (p["mort_juv_n"] + delta + p["mature_n"]) * Jn * dt
    new_Si = Si + p["mature_i"] * Ji * dt - (p["mort_sus_i"] + delta) * Si * dt - flow_si_i
    new_Ii = Ii + flow_si_i - flow_ip_i - delta * Ii * dt
    new_Ji = Ji + flow_sj_i - (p["mort_juv_i"] + delta + p["mature_i"]) * Ji * dt
    new_P = P + (
        p["spores_per_inf_n"] * flow_ip_n
        + p["spores_per_inf_i"] * flow_ip_i
        - (p["filt_n"] * (Sn + xi * In) + p["filt_i"] * (Si + xi * Ii)) * P * dt
        - p["spore_decay"] * P * dt
    )
    zF = rng.standard_normal(J)
    new_F = F + (
        -(p["filt_n"] * F * (Sn + xij * Jn + xi * In)
          + p["filt_i"] * F * (Si + xij * Ji + xi * Ii)) * dt
        + p["food_refill"] * dt
        + F * zF * np.asarray(p["noise_food"]) * np.sqrt(dt)
    )
    out = np.stack([new_Sn, new_In, new_Jn, new_Si, new_Ii, new_Ji, new_P, new_F], axis=1)
    if diag is not None:
        diag["clamp_events"] = diag.get("clamp_events", 0) + int(np.count_nonzero(out < 0))
    out = np.maximum(out, 0.0)
    if return_increments:
        incs = {
            "si_n": g_si_n, "si_i": g_si_i, "ip_n": g_ip_n,
            "ip_i": g_ip_i, "sj_n": g_sj_n, "sj_i": g_sj_i,
        }
        return out, incs
    return out


class GammaFlowModel(_MesocosmBase):
    """Full two-species model with gamma-distributed transition noise."""

    def step(self, states, params, t, dt, rng, diag=None):
        return gamma_flow_step(states, params, dt, rng, diag=diag)


def _sp(name, value, transform="log", role="shared", sd=0.02):
    return name, ParamSpec(name, role=role, transform=transform, perturbation_sd=sd), value


def _fx(name, value, transform="identity"):
    return name, ParamSpec.fixed(name, transform=transform), value


def _species_block(sp: str, v: Mapping[str, float]):
    return [
        _sp(f"birth_{sp}", v["birth"]),
        _sp(f"filt_{sp}", v["filt"]),
        _sp(f"infect_{sp}", v["infect"]),
        _sp(f"mort_sus_{sp}", v["mort_sus"]),
        _sp(f"mort_inf_{sp}", v["mort_inf"]),
        _sp(f"mort_juv_{sp}", v["mort_juv"]),
        _fx(f"mature_{sp}", 0.1, transform="log"),
        _fx(f"spores_per_inf_{sp}", 30.0, transform="log"),
        _fx(f"noise_sus_{sp}", 0.0),
        _sp(f"noise_inf_{sp}", v["noise_inf"]),
        _sp(f"noise_juv_{sp}", v["noise_juv"]),
        _sp(f"disp_sus_{sp}", v["disp_sus"]),
        _sp(f"disp_inf_{sp}", v["disp_inf"]),
    ]


# headline estimates for the mixed-species parasitized treatment
_MIXED_NATIVE_VALUES = dict(
    birth=40.8, filt=1.10e-3, infect=2.72e-1, mort_sus=8.48e-4, mort_inf=0.584,
    mort_juv=1.87e-5, noise_inf=2.93e-4, noise_juv=0.284, disp_sus=4.10, disp_inf=0.902,
)
_MIXED_INVASIVE_VALUES = dict(
    birth=2.15e5, filt=2.42e-7, infect=1.34e3, mort_sus=2.52e-3, mort_inf=0.385,
    mort_juv=5.62e-4, noise_inf=1.73e-7, noise_juv=0.302, disp_sus=5.26, disp_inf=1.39,
)

_SHARED_PARASITE = [
    _sp("spore_decay", 9.48e-4),
    _sp("filt_ratio_inf", 22.2),
    _fx("filt_ratio_juv", 1.0, transform="log"),
    _fx("food_refill", 0.37, transform="log"),
    _fx("sample_rate", 0.013, transform="log"),
    _sp("noise_spore", 0.271),
    _sp("noise_food", 0.144),
]

# single-species parasitized treatments
_SINGLE_VALUES = {
    "native": dict(
        birth=55.2, filt=7.64e-4, infect=3.06e-1, mort_sus=9.30e-7, mort_inf=0.454,
        mort_juv=7.69e-5, noise_inf=0.574, noise_juv=0.341, disp_sus=15.0, disp_inf=1.13,
        spore_decay=1.18e-4, filt_ratio_inf=11.3, noise_spore=0.460, noise_food=6.97e-2,
    ),
    "invasive": dict(
        birth=2.49e2, filt=6.49e-4, infect=6.65e-1, mort_sus=0.573, mort_inf=0.174,
        mort_juv=2.55e-5, noise_inf=0.273, noise_juv=0.372, disp_sus=70.0, disp_inf=1.17,
        spore_decay=1.71e-6, filt_ratio_inf=73.3, noise_spore=7.99e-8, noise_food=5.22e-8,
    ),
}

# parasite-free treatments
_SRJF2_VALUES = dict(
    birth_n=6.29e3, birth_i=4.75e3, filt_n=7.10e-5, filt_i=8.90e-5,
    mort_sus_n=1.03, mort_sus_i=0.449, mort_juv_n=0.213, mort_juv_i=0.735,
    noise_juv_n=0.279, noise_juv_i=4.99e-4, noise_food=5.37e-2,
    disp_sus_n=11.2, disp_sus_i=2.43,
)
_SRJF_VALUES = {
    "native": dict(birth=1.69e3, filt=1.32e-4, mort_sus=0.692, mort_juv=2.13e-8,
                   noise_juv=0.307, noise_food=9.31e-7, disp_sus=13.4),
    "invasive": dict(birth=9.77e2, filt=2.67e-4, mort_sus=0.599, mort_juv=0.298,
                     noise_juv=0.378, noise_food=4.73e-2, disp_sus=2.35),
}

_SUFFIX = {"native": "n", "invasive": "i"}


def initial_densities(hosts: str, parasite: bool) -> dict[str, float]:
    """Founding densities per liter for a treatment arm: 45 adults split
    35/10 when both species are present, spores at 25/mL when exposed,
    algae at the stocked 2.5e8 cells."""
    if hosts not in ("both", "native", "invasive"):
        raise ValueError(f"unknown hosts {hosts!r}")
    d = {lbl: 0.0 for lbl in FULL_STATE_LABELS}
    if hosts == "both":
        d["S_n"] = MIXED_NATIVE
        d["S_i"] = MIXED_INVASIVE
    elif hosts == "native":
        d["S_n"] = SINGLE_HOST
    else:
        d["S_i"] = SINGLE_HOST
    d["P"] = SPORES_INIT if parasite else 0.0
    d["F"] = FOOD_INIT
    return d


def _build(entries):
    names = [e[0] for e in entries]
    spec = tuple(e[1] for e in entries)
    values = {e[0]: e[2] for e in entries}
    return names, spec, values


def _obs_map(labels):
    table = {
        "S_n": ("S_n", "disp_sus_n"), "I_n": ("I_n", "disp_inf_n"),
        "S_i": ("S_i", "disp_sus_i"), "I_i": ("I_i", "disp_inf_i"),
    }
    return tuple((lbl,) + table[lbl] for lbl in labels)


def _single_obs_map(sp, with_infection=True):
    out = [(f"S_{sp}", f"S_{sp}", f"disp_sus_{sp}")]
    if with_infection:
        out.append((f"I_{sp}", f"I_{sp}", f"disp_inf_{sp}"))
    return tuple(out)


def _identity_map(names):
    full = {}
    dynamics = [n for n in names if not n.startswith("disp_")]
    for n in dynamics:
        full[n] = n
    return full


def _make_sirjpf2(dt_max=0.1):
    entries = (
        _species_block("n", _MIXED_NATIVE_VALUES)
        + _species_block("i", _MIXED_INVASIVE_VALUES)
        + _SHARED_PARASITE
    )
    names, spec, values = _build(entries)
    init = initial_densities("both", parasite=True)
    model = GaussianMesocosmModel(
        "sirjpf2",
        FULL_STATE_LABELS,
        _obs_map(("S_n", "I_n", "S_i", "I_i")),
        spec,
        [init[lbl] for lbl in FULL_STATE_LABELS],
        full_param_map=_identity_map(names),
        dt_max=dt_max,
    )
    model.default_values = values
    return model


def _make_sirjpf(species="native", dt_max=0.1):
    sp = _SUFFIX[species]
    v = _SINGLE_VALUES[species]
    entries = _species_block(sp, v) + [
        _sp("spore_decay", v["spore_decay"]),
        _sp("filt_ratio_inf", v["filt_ratio_inf"]),
        _fx("filt_ratio_juv", 1.0, transform="log"),
        _fx("food_refill", 0.37, transform="log"),
        _fx("sample_rate", 0.013, transform="log"),
        _sp("noise_spore", v["noise_spore"]),
        _sp("noise_food", v["noise_food"]),
    ]
    names, spec, values = _build(entries)
    labels = (f"S_{sp}", f"I_{sp}", f"J_{sp}", "P", "F")
    fmap = {}
    for full_name in [e[0] for e in _species_block("n", _MIXED_NATIVE_VALUES)] + [
        e[0] for e in _species_block("i", _MIXED_INVASIVE_VALUES)
    ]:
        if full_name.startswith("disp_"):
            continue
        fmap[full_name] = full_name if full_name in names else 0.0
    for shared in ("spore_decay", "filt_ratio_inf", "filt_ratio_juv", "food_refill",
                   "sample_rate", "noise_spore", "noise_food"):
        fmap[shared] = shared
    init = initial_densities(species, parasite=True)
    model = GaussianMesocosmModel(
        "sirjpf",
        labels,
        _single_obs_map(sp),
        spec,
        [init[lbl] for lbl in labels],
        full_param_map=fmap,
        dt_max=dt_max,
    )
    model.default_values = values
    model.species = species
    return model


def _no_parasite_block(sp, v):
    return [
        _sp(f"birth_{sp}", v.get(f"birth_{sp}", v.get("birth"))),
        _sp(f"filt_{sp}", v.get(f"filt_{sp}", v.get("filt"))),
        _sp(f"mort_sus_{sp}", v.get(f"mort_sus_{sp}", v.get("mort_sus"))),
        _sp(f"mort_juv_{sp}", v.get(f"mort_juv_{sp}", v.get("mort_juv"))),
        _fx(f"mature_{sp}", 0.1, transform="log"),
        _fx(f"noise_sus_{sp}", 0.0),
        _sp(f"noise_juv_{sp}", v.get(f"noise_juv_{sp}", v.get("noise_juv"))),
        _sp(f"disp_sus_{sp}", v.get(f"disp_sus_{sp}", v.get("disp_sus"))),
    ]


def _no_parasite_map(own_names):
    fmap = {}
    all_dynamics = [e[0] for e in _species_block("n", _MIXED_NATIVE_VALUES)
                    if not e[0].startswith("disp_")]
    all_dynamics += [e[0] for e in _species_block("i", _MIXED_INVASIVE_VALUES)
                     if not e[0].startswith("disp_")]
    all_dynamics += ["spore_decay", "filt_ratio_inf", "filt_ratio_juv", "food_refill",
                     "sample_rate", "noise_spore", "noise_food"]
    for n in all_dynamics:
        fmap[n] = n if n in own_names else 0.0
    return fmap


def _make_srjf2(dt_max=0.1):
    v = _SRJF2_VALUES
    entries = (
        _no_parasite_block("n", v)
        + _no_parasite_block("i", v)
        + [
            _fx("filt_ratio_juv", 1.0, transform="log"),
            _fx("food_refill", 0.37, transform="log"),
            _fx("sample_rate", 0.013, transform="log"),
            _sp("noise_food", v["noise_food"]),
        ]
    )
    names, spec, values = _build(entries)
    labels = ("S_n", "J_n", "S_i", "J_i", "F")
    init = initial_densities("both", parasite=False)
    model = GaussianMesocosmModel(
        "srjf2",
        labels,
        (("S_n", "S_n", "disp_sus_n"), ("S_i", "S_i", "disp_sus_i")),
        spec,
        [init[lbl] for lbl in labels],
        full_param_map=_no_parasite_map(names),
        dt_max=dt_max,
    )
    model.default_values = values
    return model


def _make_srjf(species="native", dt_max=0.1):
    sp = _SUFFIX[species]
    v = _SRJF_VALUES[species]
    entries = _no_parasite_block(sp, v) + [
        _fx("filt_ratio_juv", 1.0, transform="log"),
        _fx("food_refill", 0.37, transform="log"),
        _fx("sample_rate", 0.013, transform="log"),
        _sp("noise_food", v["noise_food"]),
    ]
    names, spec, values = _build(entries)
    labels = (f"S_{sp}", f"J_{sp}", "F")
    init = initial_densities(species, parasite=False)
    model = GaussianMesocosmModel(
        "srjf",
        labels,
        _single_obs_map(sp, with_infection=False),
        spec,
        [init[lbl] for lbl in labels],
        full_param_map=_no_parasite_map(names),
        dt_max=dt_max,
    )
    model.default_values = values
    model.species = species
    return model


def _make_sirpf2(dt_max=0.1):
    def block(sp, v):
        return [
            _sp(f"birth_{sp}", v["birth"]),
            _sp(f"filt_{sp}", v["filt"]),
            _sp(f"infect_{sp}", v["infect"]),
            _sp(f"mort_sus_{sp}", v["mort_sus"]),
            _sp(f"mort_inf_{sp}", v["mort_inf"]),
            _fx(f"spores_per_inf_{sp}", 30.0, transform="log"),
            _sp(f"noise_inf_{sp}", v["noise_inf"]),
            _sp(f"disp_sus_{sp}", v["disp_sus"]),
            _sp(f"disp_inf_{sp}", v["disp_inf"]),
        ]

    entries = (
        block("n", _MIXED_NATIVE_VALUES)
        + block("i", _MIXED_INVASIVE_VALUES)
        + _SHARED_PARASITE
    )
    names, spec, values = _build(entries)
    labels = ("S_n", "I_n", "S_i", "I_i", "P", "F")
    init = initial_densities("both", parasite=True)
    model = NoJuvenileModel(
        "sirpf2",
        labels,
        _obs_map(("S_n", "I_n", "S_i", "I_i")),
        spec,
        [init[lbl] for lbl in labels],
        dt_max=dt_max,
    )
    model.default_values = values
    return model


def _make_gamma(dt_max=0.1):
    def block(sp, v):
        return [
            _sp(f"birth_{sp}", v["birth"]),
            _sp(f"filt_{sp}", v["filt"]),
            _sp(f"infect_{sp}", v["infect"]),
            _sp(f"mort_sus_{sp}", v["mort_sus"]),
            _sp(f"mort_inf_{sp}", v["mort_inf"]),
            _sp(f"mort_juv_{sp}", v["mort_juv"]),
            _fx(f"mature_{sp}", 0.1, transform="log"),
            _fx(f"spores_per_inf_{sp}", 30.0, transform="log"),
            _sp(f"noise_si_{sp}", 0.1),
            _sp(f"noise_ip_{sp}", 0.1),
            _sp(f"noise_sj_{sp}", 0.1),
            _sp(f"disp_sus_{sp}", v["disp_sus"]),
            _sp(f"disp_inf_{sp}", v["disp_inf"]),
        ]

    entries = (
        block("n", _MIXED_NATIVE_VALUES)
        + block("i", _MIXED_INVASIVE_VALUES)
        + [
            _sp("spore_decay", 9.48e-4),
            _sp("filt_ratio_inf", 22.2),
            _fx("filt_ratio_juv", 1.0, transform="log"),
            _fx("food_refill", 0.37, transform="log"),
            _fx("sample_rate", 0.013, transform="log"),
            _sp("noise_food", 0.144),
        ]
    )
    names, spec, values = _build(entries)
    init = initial_densities("both", parasite=True)
    model = GammaFlowModel(
        "sirjpf2_gamma",
        FULL_STATE_LABELS,
        _obs_map(("S_n", "I_n", "S_i", "I_i")),
        spec,
        [init[lbl] for lbl in FULL_STATE_LABELS],
        dt_max=dt_max,
    )
    model.default_values = values
    return model


_FACTORIES = {
    "sirjpf2": _make_sirjpf2,
    "sirjpf": _make_sirjpf,
    "srjf2": _make_srjf2,
    "srjf": _make_srjf,
    "sirpf2": _make_sirpf2,
    "sirjpf2_gamma": _make_gamma,
}

MODEL_NAMES = tuple(_FACTORIES)


def model_variant(name: str, **options):
    """Build a model from the registry: sirjpf2, sirjpf, srjf2, srjf,
    sirpf2 or sirjpf2_gamma. Single-species variants accept
    species="native"|"invasive"."""
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_FACTORIES)}") from None
    return factory(**options)


def default_params(model) -> ParamVector:
    """The model's bundled parameter estimates as a ParamVector."""
    return ParamVector(dict(model.default_values), model.param_spec)


# six experimental arms: host composition x parasite exposure
TREATMENTS = {
    "both_parasite": ("sirjpf2", "both", True, {}),
    "both_control": ("srjf2", "both", False, {}),
    "native_parasite": ("sirjpf", "native", True, {"species": "native"}),
    "native_control": ("srjf", "native", False, {"species": "native"}),
    "invasive_parasite": ("sirjpf", "invasive", True, {"species": "invasive"}),
    "invasive_control": ("srjf", "invasive", False, {"species": "invasive"}),
}


def treatment_preset(treatment: str, dt_max: float = 0.1):
    """Model plus initial conditions for one of the six experimental arms."""
    try:
        model_name, hosts, parasite, opts = TREATMENTS[treatment]
    except KeyError:
        raise ValueError(
            f"unknown treatment {treatment!r}; choose from {sorted(TREATMENTS)}"
        ) from None
    model = model_variant(model_name, dt_max=dt_max, **opts)
    dens = initial_densities(hosts, parasite)
    return model.with_init([dens[lbl] for lbl in model.state_labels])
