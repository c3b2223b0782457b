"""Data ingestion, run configuration and persisted run records.

Panel data arrive as CSV with one row per (unit, sampling time); run
settings come from a YAML file whose canonical JSON form is hashed into
every run record so a result can always be traced back to an exact
configuration and seed.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import pandas as pd
import yaml

from . import __version__
from .daphnia import MODEL_NAMES, TREATMENTS, default_params, model_variant, treatment_preset
from .errors import ConfigError, DataError
from .panel import PanelDataset
from .pomp import Observation

__all__ = [
    "FIT_COLUMNS",
    "VALIDATION_COLUMNS",
    "ingest_panel_csv",
    "emit_panel_csv",
    "RunConfig",
    "RunRecord",
    "canonical_config",
    "config_hash",
]

# CSV column -> internal observation label
FIT_COLUMNS = {
    "S_native": "S_n",
    "I_native": "I_n",
    "S_invasive": "S_i",
    "I_invasive": "I_i",
}
# juvenile counts are kept for out-of-sample validation, never for fitting
VALIDATION_COLUMNS = {"J_native": "J_n", "J_invasive": "J_i"}


def _parse_count(raw, column, row_number):
    if raw is None or (isinstance(raw, float) and np.isnan(raw)):
        return None
    s = str(raw).strip()
    if s == "" or s.lower() == "na":
        return None
    try:
        value = float(s)
    except ValueError:
        raise DataError(f"row {row_number}: count {column}={raw!r} is not a number") from None
    if not value.is_integer() or value < 0:
        raise DataError(f"row {row_number}: count {column}={raw!r} is not a nonnegative integer")
    return int(value)


def ingest_panel_csv(path) -> PanelDataset:
    """Read a panel CSV with columns unit, time and any of the known count
    columns. Empty cells become missing labels. Rejects non-integer counts,
    non-increasing times within a unit and duplicate (unit, time) pairs,
    naming the offending rows.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    df = pd.read_csv(path, dtype=str)
    if "unit" not in df.columns or "time" not in df.columns:
        raise DataError("panel CSV must have 'unit' and 'time' columns")
    count_cols = [c for c in df.columns if c in FIT_COLUMNS]
    valid_cols = [c for c in df.columns if c in VALIDATION_COLUMNS]
    if not count_cols:
        raise DataError(
            f"panel CSV must contain at least one count column among {sorted(FIT_COLUMNS)}"
        )

    obs: dict[str, list[Observation]] = {}
    last_time: dict[str, tuple[float, int]] = {}
    seen: dict[tuple[str, float], int] = {}
    validation_rows = []
    for i, row in enumerate(df.itertuples(index=False), start=2):  # 1 header row
        rec = row._asdict()
        uid = str(rec["unit"]).strip()
        try:
            t = float(rec["time"])
        except (TypeError, ValueError):
            raise DataError(f"row {i}: time {rec['time']!r} is not a number") from None
        key = (uid, t)
        if key in seen:
            raise DataError(f"row {i}: duplicate (unit, time) also appears at row {seen[key]}")
        seen[key] = i
        if uid in last_time and t <= last_time[uid][0]:
            raise DataError(
                f"row {i}: time {t} for unit {uid!r} does not increase "
                f"(previous {last_time[uid][0]} at row {last_time[uid][1]})"
            )
        last_time[uid] = (t, i)
        counts = {}
        missing = set()
        for col in count_cols:
            parsed = _parse_count(rec[col], col, i)
            label = FIT_COLUMNS[col]
            if parsed is None:
                missing.add(label)
            else:
                counts[label] = parsed
        obs.setdefault(uid, []).append(Observation(time=t, counts=counts, missing=missing))
        if valid_cols:
            vrow = {"unit": uid, "time": t}
            for col in valid_cols:
                vrow[VALIDATION_COLUMNS[col]] = _parse_count(rec[col], col, i)
            validation_rows.append(vrow)

    validation = pd.DataFrame(validation_rows) if validation_rows else None
    return PanelDataset(obs, validation=validation)


def emit_panel_csv(dataset: PanelDataset, path) -> None:
    """Inverse of ingest_panel_csv for the fit columns plus any validation
    table carried by the dataset."""
    label_to_col = {v: k for k, v in FIT_COLUMNS.items()}
    rows = []
    for uid in dataset.unit_ids:
        for ob in dataset.obs(uid):
            row: dict[str, Any] = {"unit": uid, "time": ob.time}
            for label, count in ob.counts.items():
                row[label_to_col[label]] = count
            for label in ob.missing:
                row.setdefault(label_to_col[label], "")
            rows.append(row)
    df = pd.DataFrame(rows)
    if dataset.validation is not None:
        val = dataset.validation.rename(
            columns={v: k for k, v in VALIDATION_COLUMNS.items()}
        )
        df = df.merge(val, on=["unit", "time"], how="left")
    df.to_csv(path, index=False)


_ALGO_KEYS = {
    "J", "M", "rho", "stages", "marginalize", "dt_max", "n_reps", "n_sims",
    "selection_fraction", "eval_reps", "n_starts", "J_eval", "span", "confidence",
}


@dataclass
class RunConfig:
    """Validated run configuration."""

    seed: int
    model: str | None = None
    treatment: str | None = None
    params: dict[str, float] = field(default_factory=dict)
    specs: dict[str, dict] = field(default_factory=dict)
    algorithm: dict[str, Any] = field(default_factory=dict)
    data: str | None = None
    focal: str | None = None
    grid: list[float] = field(default_factory=list)
    tau_grid: list[float] = field(default_factory=list)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping, seed_override: int | None = None) -> "RunConfig":
        d = dict(d)
        seed = seed_override if seed_override is not None else d.get("seed")
        if seed is None:
            raise ConfigError("a seed is mandatory (config key 'seed' or --seed)")
        try:
            seed = int(seed)
        except (TypeError, ValueError):
            raise ConfigError(f"seed must be an integer, got {d.get('seed')!r}") from None
        model = d.get("model")
        treatment = d.get("treatment")
        if treatment is not None and treatment not in TREATMENTS:
            raise ConfigError(
                f"unknown treatment {treatment!r}; choose from {sorted(TREATMENTS)}"
            )
        if model is not None and model not in MODEL_NAMES:
            raise ConfigError(f"unknown model {model!r}; choose from {sorted(MODEL_NAMES)}")
        algorithm = dict(d.get("algorithm") or {})
        unknown = set(algorithm) - _ALGO_KEYS
        if unknown:
            raise ConfigError(f"unknown algorithm settings: {sorted(unknown)}")
        cfg = cls(
            seed=seed,
            model=model,
            treatment=treatment,
            params=dict(d.get("params") or {}),
            specs=dict(d.get("specs") or {}),
            algorithm=algorithm,
            data=d.get("data"),
            focal=d.get("focal"),
            grid=list(d.get("grid") or []),
            tau_grid=list(d.get("tau_grid") or []),
            raw=d,
        )
        return cfg

    @classmethod
    def from_yaml(cls, path, seed_override: int | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as fh:
                d = yaml.safe_load(fh) or {}
        except yaml.YAMLError as err:
            raise ConfigError(f"cannot parse config {path}: {err}") from None
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping of keys to values")
        return cls.from_dict(d, seed_override=seed_override)

    def build_model(self):
        """Model and starting parameters implied by the config."""
        dt_max = float(self.algorithm.get("dt_max", 0.1))
        if self.treatment is not None:
            model = treatment_preset(self.treatment, dt_max=dt_max)
        elif self.model is not None:
            model = model_variant(self.model, dt_max=dt_max)
        else:
            raise ConfigError("config needs either 'model' or 'treatment'")
        params = default_params(model)
        known = set(params.values)
        unknown = set(self.params) - known
        if unknown:
            raise ConfigError(
                f"config sets parameters not in model {model.name!r}: {sorted(unknown)}"
            )
        unknown_specs = set(self.specs) - known
        if unknown_specs:
            raise ConfigError(
                f"config overrides specs of unknown parameters: {sorted(unknown_specs)}"
            )
        if self.params:
            params = params.replace(**{k: float(v) for k, v in self.params.items()})
        if self.specs:
            from .params import ParamSpec

            new_spec = []
            for s in model.param_spec:
                if s.name in self.specs:
                    override = dict(self.specs[s.name])
                    new_spec.append(
                        ParamSpec(
                            s.name,
                            role=override.get("role", s.role),
                            transform=override.get("transform", s.transform),
                            perturbation_sd=override.get("perturbation_sd", s.perturbation_sd),
                        )
                    )
                else:
                    new_spec.append(s)
            model.param_spec = tuple(new_spec)
            from .params import ParamVector

            params = ParamVector(dict(params.values), model.param_spec)
        return model, params

    def as_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model,
            "treatment": self.treatment,
            "params": self.params,
            "specs": self.specs,
            "algorithm": self.algorithm,
            "data": self.data,
            "focal": self.focal,
            "grid": self.grid,
            "tau_grid": self.tau_grid,
        }


def canonical_config(d: Mapping) -> str:
    """Canonical JSON form used for hashing: sorted keys, fixed separators."""
    return json.dumps(d, sort_keys=True, separators=(",", ":"), default=float)


def config_hash(d: Mapping) -> str:
    return hashlib.sha256(canonical_config(d).encode("utf8")).hexdigest()


def _git_revision() -> str | None:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5
        )
    except (OSError, subprocess.TimeoutExpired):
        return None
    return out.stdout.strip() if out.returncode == 0 else None


@dataclass
class RunRecord:
    """Everything needed to reproduce and audit one command run."""

    command: str
    config: dict
    config_hash: str
    seed: int
    version: str
    git_revision: str | None
    wall_time_s: float
    results: dict
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def create(cls, command: str, config: RunConfig, wall_time_s: float,
               results: dict, diagnostics: dict | None = None) -> "RunRecord":
        cfg = config.as_dict()
        return cls(
            command=command,
            config=cfg,
            config_hash=config_hash(cfg),
            seed=config.seed,
            version=__version__,
            git_revision=_git_revision(),
            wall_time_s=wall_time_s,
            results=results,
            diagnostics=diagnostics or {},
        )

    def save(self, path) -> None:
        payload = {
            "command": self.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "git_revision": self.git_revision,
            "wall_time_s": self.wall_time_s,
            "results": self.results,
            "diagnostics": self.diagnostics,
        }
        Path(path).write_text(json.dumps(payload, indent=2, default=float))

    @classmethod
    def load(cls, path) -> "RunRecord":
        payload = json.loads(Path(path).read_text())
        return cls(**payload)
