"""Named parameter sets with transform metadata.

Parameters live on two scales. The natural scale is what model code
consumes. The estimation scale is where Gaussian perturbations and
optimizer moves happen: positive parameters are log-transformed,
(0,1)-constrained ones logit-transformed. Fixed parameters travel along
in both representations but carry perturbation sd 0 so nothing ever
moves them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "ParamSpec",
    "ParamVector",
    "to_estimation_scale",
    "from_estimation_scale",
    "transform_array",
    "inverse_transform_array",
    "perturbation_sds",
]

ROLES = ("shared", "unit_specific", "fixed")
TRANSFORMS = ("log", "logit", "identity")


@dataclass(frozen=True)
class ParamSpec:
    """Declaration of a single parameter.

    perturbation_sd is interpreted on the estimation scale. A role of
    "fixed" forces it to zero regardless of what was passed.
    """

    name: str
    role: str = "shared"
    transform: str = "log"
    perturbation_sd: float = 0.02
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r} for parameter {self.name!r}")
        if self.transform not in TRANSFORMS:
            raise ValueError(
                f"unknown transform {self.transform!r} for parameter {self.name!r}"
            )
        if self.role == "fixed":
            object.__setattr__(self, "perturbation_sd", 0.0)
        elif self.perturbation_sd < 0:
            raise ValueError(f"perturbation_sd < 0 for parameter {self.name!r}")

    @classmethod
    def fixed(cls, name: str, transform: str = "identity") -> "ParamSpec":
        """A constant. Identity transform by default so a value of 0 is legal."""
        return cls(name=name, role="fixed", transform=transform, perturbation_sd=0.0)


def _check_domain(name: str, transform: str, value: float) -> None:
    if transform == "log" and not value > 0:
        raise ValueError(f"parameter {name!r}: log transform needs value > 0, got {value}")
    if transform == "logit" and not 0 < value < 1:
        raise ValueError(f"parameter {name!r}: logit transform needs value in (0,1), got {value}")


def _logit(x):
    return np.log(x) - np.log1p(-x)


def _expit(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def transform_array(values: np.ndarray, spec: Sequence[ParamSpec]) -> np.ndarray:
    """Natural -> estimation scale along the last axis, one column per spec entry."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != len(spec):
        raise ValueError(f"expected {len(spec)} parameter columns, got {values.shape[-1]}")
    out = values.copy()
    for j, s in enumerate(spec):
        col = values[..., j]
        bad = None
        if s.transform == "log":
            if not np.all(col > 0):
                bad = float(np.min(col))
            else:
                out[..., j] = np.log(col)
        elif s.transform == "logit":
            if not (np.all(col > 0) and np.all(col < 1)):
                bad = float(col.flat[int(np.argmin((col > 0) & (col < 1)))])
            else:
                out[..., j] = _logit(col)
        if bad is not None:
            _check_domain(s.name, s.transform, bad)
    return out


def inverse_transform_array(values: np.ndarray, spec: Sequence[ParamSpec]) -> np.ndarray:
    """Estimation -> natural scale; total inverse, never raises on finite input."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != len(spec):
        raise ValueError(f"expected {len(spec)} parameter columns, got {values.shape[-1]}")
    out = values.copy()
    for j, s in enumerate(spec):
        if s.transform == "log":
            out[..., j] = np.exp(values[..., j])
        elif s.transform == "logit":
            out[..., j] = _expit(values[..., j])
    return out


def perturbation_sds(spec: Sequence[ParamSpec]) -> np.ndarray:
    """Per-parameter perturbation sds in spec order; zeros flag fixed entries."""
    return np.array([s.perturbation_sd for s in spec], dtype=float)


@dataclass(frozen=True)
class ParamVector:
    """Values for every entry of a ParamSpec list, natural scale."""

    values: Mapping[str, float]
    spec: tuple[ParamSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "spec", tuple(self.spec))
        object.__setattr__(self, "values", dict(self.values))
        names = [s.name for s in self.spec]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in spec")
        missing = [n for n in names if n not in self.values]
        extra = [k for k in self.values if k not in set(names)]
        if missing:
            raise ValueError(f"missing values for parameters: {missing}")
        if extra:
            raise ValueError(f"values for unknown parameters: {extra}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.spec)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def as_array(self) -> np.ndarray:
        return np.array([self.values[s.name] for s in self.spec], dtype=float)

    def replace(self, **updates: float) -> "ParamVector":
        unknown = [k for k in updates if k not in self.values]
        if unknown:
            raise ValueError(f"unknown parameters: {unknown}")
        new = dict(self.values)
        new.update(updates)
        return ParamVector(new, self.spec)


def to_estimation_scale(pv: ParamVector) -> np.ndarray:
    """Transformed parameter vector in spec order. Fixed entries are included;
    use perturbation_sds() to see which ones they are."""
    return transform_array(pv.as_array(), pv.spec)


def from_estimation_scale(v: Iterable[float], spec: Sequence[ParamSpec]) -> ParamVector:
    v = np.asarray(list(v) if not isinstance(v, np.ndarray) else v, dtype=float)
    if v.ndim != 1 or v.size != len(spec):
        raise ValueError(f"expected a vector of length {len(spec)}, got shape {v.shape}")
    nat = inverse_transform_array(v, spec)
    return ParamVector({s.name: float(nat[j]) for j, s in enumerate(spec)}, tuple(spec))
