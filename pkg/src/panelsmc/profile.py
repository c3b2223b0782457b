"""Profile likelihoods with Monte Carlo error adjustment.

A profile is built from repeated constrained searches: the focal
parameter is pinned at each grid value and everything else is maximized.
Because every log-likelihood is itself a Monte Carlo estimate, the raw
profile is noisy. The interval construction smooths the points with a
local quadratic regression, estimates the Monte Carlo error of the
smoothed curve from the fit, and widens the usual chi-square cutoff to
keep coverage.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import pandas as pd
from scipy.stats import chi2

from .errors import DataError
from .panel import PanelParams, PanelPomp
from .params import ParamSpec, ParamVector

__all__ = [
    "ProfilePoint",
    "ProfileTask",
    "McapResult",
    "profile_design",
    "pin_parameter",
    "mcap",
    "poor_mans_profile",
    "save_profile_points",
    "load_profile_points",
]


@dataclass
class ProfilePoint:
    focal_value: float
    loglik: float
    replicate_id: int = 0
    full_params: PanelParams | None = None

    def __post_init__(self):
        if not np.isfinite(self.loglik):
            raise ValueError(f"profile point at {self.focal_value} has nonfinite loglik")


@dataclass(frozen=True)
class ProfileTask:
    """One constrained search: run the usual staged search with `focal`
    pinned at `value` (role fixed, perturbation sd forced to zero)."""

    focal: str
    value: float
    replicate_id: int


def _find_param(panel: PanelPomp, focal: str) -> ParamSpec:
    for s in panel.combined_spec:
        if s.name == focal:
            return s
    raise ValueError(f"unknown focal parameter {focal!r}")


def _pinned(specs, focal):
    return tuple(
        ParamSpec(s.name, role="fixed", transform=s.transform) if s.name == focal else s
        for s in specs
    )


def profile_design(
    panel: PanelPomp, focal: str, grid: Sequence[float], n_starts: int
) -> list[ProfileTask]:
    """Cartesian design of constrained search tasks over the grid."""
    _find_param(panel, focal)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 5:
        raise ValueError("profile grid needs at least 5 values")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("profile grid must be sorted and duplicate-free")
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    return [
        ProfileTask(focal=focal, value=float(v), replicate_id=r)
        for v in grid
        for r in range(n_starts)
    ]


def pin_parameter(
    panel: PanelPomp, params: PanelParams, focal: str, value: float
) -> tuple[PanelPomp, PanelParams]:
    """Return a panel and parameter set with `focal` fixed at `value`."""
    _find_param(panel, focal)
    new_panel = PanelPomp(
        panel.units, _pinned(panel.shared_spec, focal), _pinned(panel.specific_spec, focal)
    )

    def pin_values(pv: ParamVector, specs):
        vals = dict(pv.values)
        if focal in vals:
            vals[focal] = value
        return ParamVector(vals, specs)

    new_params = PanelParams(
        shared=pin_values(params.shared, new_panel.shared_spec),
        specific={
            u: pin_values(pv, new_panel.specific_spec) for u, pv in params.specific.items()
        },
    )
    return new_panel, new_params


def _tricube(u: np.ndarray) -> np.ndarray:
    w = np.zeros_like(u)
    inside = np.abs(u) < 1
    w[inside] = (1 - np.abs(u[inside]) ** 3) ** 3
    return w


def _local_quadratic(x: np.ndarray, y: np.ndarray, span: float, grid: np.ndarray) -> np.ndarray:
    """Tricube-weighted quadratic regression evaluated on `grid`."""
    n = x.size
    q = min(n, max(4, int(np.ceil(span * n))))
    out = np.empty(grid.size)
    for i, g in enumerate(grid):
        d = np.abs(x - g)
        h = np.sort(d)[q - 1]
        if h == 0:
            h = max(np.max(d), 1.0) * 1e-9
        w = _tricube(d / h)
        sw = np.sqrt(w)
        xc = x - g
        X = np.column_stack([np.ones(n), xc, xc**2])
        beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
        out[i] = beta[0]
    return out


def _weighted_quadratic_fit(x, y, span, center):
    """Quadratic fit around `center` with tricube weights over the span
    fraction of nearest points; returns coefficients of y ~ c + b*x - a*x^2
    and their covariance."""
    n = x.size
    dist = np.abs(x - center)
    cut = np.sort(dist)[min(n - 1, max(3, int(np.trunc(span * n))))]
    included = dist <= cut
    maxdist = np.max(dist[included])
    if maxdist == 0:
        maxdist = 1.0
    w = np.zeros(n)
    w[included] = (1 - (dist[included] / maxdist) ** 3) ** 3
    X = np.column_stack([np.ones(n), x, -(x**2)])
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    XtX = Xw.T @ Xw
    try:
        beta = np.linalg.solve(XtX, Xw.T @ yw)
        cov = np.linalg.inv(XtX)
    except np.linalg.LinAlgError:
        return -1.0, 0.0, 0.0, np.zeros((3, 3))
    resid = yw - Xw @ beta
    dof = max(int(np.count_nonzero(w > 0)) - 3, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * cov
    c, b, a = beta
    return a, b, c, cov


@dataclass
class McapResult:
    grid: np.ndarray
    smoothed: np.ndarray
    mle: float
    ci: tuple[float, float]
    lo_open: bool
    hi_open: bool
    mc_se: float
    se_stat: float
    cutoff: float
    confidence: float

    def to_json(self) -> str:
        payload = {
            "mle": self.mle,
            "ci": list(self.ci),
            "lo_open": self.lo_open,
            "hi_open": self.hi_open,
            "mc_se": self.mc_se,
            "se_stat": self.se_stat,
            "cutoff": self.cutoff,
            "confidence": self.confidence,
            "grid": self.grid.tolist(),
            "smoothed": self.smoothed.tolist(),
        }
        return json.dumps(payload, indent=2)


def mcap(
    points: Sequence[ProfilePoint],
    span: float = 0.75,
    confidence: float = 0.95,
    n_grid: int = 1000,
) -> McapResult:
    """Smoothed profile with a Monte-Carlo-adjusted confidence cutoff.

    Per focal value only the best replicate is kept. The smoothed profile
    is a tricube-weighted local quadratic; a weighted quadratic around its
    maximum yields the Monte Carlo standard error of the maximizer (mc_se)
    and the curvature scale (se_stat). The log-likelihood drop defining
    the interval is half the chi-square quantile inflated by
    (1 + mc_se^2 / se_stat^2); crossings at the grid edge flag that side
    of the interval as open.
    """
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    best: dict[float, float] = {}
    for pt in points:
        v = float(pt.focal_value)
        if v not in best or pt.loglik > best[v]:
            best[v] = float(pt.loglik)
    if len(best) < 10:
        raise ValueError("need profile points at >= 10 distinct focal values")
    x = np.array(sorted(best))
    y = np.array([best[v] for v in x])

    grid = np.linspace(x[0], x[-1], n_grid)
    smoothed = _local_quadratic(x, y, span, grid)
    mle = float(grid[np.argmax(smoothed)])

    base = 0.5 * chi2.ppf(confidence, df=1)
    a, b, _, cov = _weighted_quadratic_fit(x, y, span, mle)
    span_x = float(x[-1] - x[0])
    # a quadratic whose implied interval scale exceeds the whole grid carries
    # no usable curvature information
    informative = a > 0 and np.sqrt(1.0 / (2 * a)) <= span_x
    if informative:
        var_c, var_b, var_a = np.diag(cov)
        cov_ab = cov[2, 1]
        mc_se2 = (1.0 / (4 * a**2)) * (
            var_b + (b**2 / a**2) * var_a - (2 * b / a) * cov_ab
        )
        mc_se2 = max(float(mc_se2), 0.0)
        se_stat2 = 1.0 / (2 * a)
        cutoff = float(base * (1.0 + mc_se2 / se_stat2))
        mc_se = float(np.sqrt(mc_se2))
        se_stat = float(np.sqrt(se_stat2))
    else:
        # flat or monotone profile: fall back to the unadjusted cutoff and
        # let the crossing search report open sides
        mc_se = float("nan")
        se_stat = float("nan")
        cutoff = float(base)

    keep = (np.max(smoothed) - smoothed) < cutoff
    inside = np.flatnonzero(keep)
    lo, hi = float(grid[inside[0]]), float(grid[inside[-1]])
    return McapResult(
        grid=grid,
        smoothed=smoothed,
        mle=mle,
        ci=(lo, hi),
        lo_open=bool(inside[0] == 0),
        hi_open=bool(inside[-1] == n_grid - 1),
        mc_se=mc_se,
        se_stat=se_stat,
        cutoff=cutoff,
        confidence=confidence,
    )


def poor_mans_profile(
    points: Sequence[ProfilePoint],
    composite: Callable[[PanelParams], float],
    grid: Sequence[float],
) -> list[ProfilePoint]:
    """Profile of a derived quantity reusing existing search output.

    Every point is mapped through `composite`, binned to the nearest grid
    value, and each bin keeps its best log-likelihood. Empty bins are
    dropped with a warning so the result can feed mcap directly.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("composite grid must be sorted with at least 2 values")
    edges = (grid[1:] + grid[:-1]) / 2
    binned: dict[int, ProfilePoint] = {}
    for pt in points:
        if pt.full_params is None:
            raise ValueError("poor_mans_profile needs points carrying full_params")
        c = float(composite(pt.full_params))
        k = int(np.searchsorted(edges, c))
        prev = binned.get(k)
        if prev is None or pt.loglik > prev.loglik:
            binned[k] = ProfilePoint(
                focal_value=float(grid[k]),
                loglik=pt.loglik,
                replicate_id=pt.replicate_id,
                full_params=pt.full_params,
            )
    empty = [float(grid[k]) for k in range(grid.size) if k not in binned]
    if empty:
        warnings.warn(f"composite grid bins with no points were dropped: {empty}")
    return [binned[k] for k in sorted(binned)]


def save_profile_points(points: Sequence[ProfilePoint], path) -> None:
    rows = []
    for pt in points:
        packed = ""
        if pt.full_params is not None:
            packed = json.dumps(
                {
                    "shared": pt.full_params.shared.values,
                    "specific": {u: pv.values for u, pv in pt.full_params.specific.items()},
                },
                sort_keys=True,
            )
        rows.append(
            {
                "focal": pt.focal_value,
                "loglik": pt.loglik,
                "replicate": pt.replicate_id,
                "params": packed,
            }
        )
    pd.DataFrame(rows).to_csv(path, index=False)


def load_profile_points(path) -> list[ProfilePoint]:
    df = pd.read_csv(path)
    required = {"focal", "loglik", "replicate"}
    if not required.issubset(df.columns):
        raise DataError(f"profile CSV must have columns {sorted(required)}")
    return [
        ProfilePoint(
            focal_value=float(r.focal), loglik=float(r.loglik), replicate_id=int(r.replicate)
        )
        for r in df.itertuples()
    ]
