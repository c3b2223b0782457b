import numpy as np
import pytest

from panelsmc import (
    PanelParams,
    PanelPomp,
    ParamSpec,
    ParamVector,
    ProfilePoint,
    mcap,
    pin_parameter,
    poor_mans_profile,
    profile_design,
)
from lgssm import Ar1Model

CHI2_CUTOFF = 1.920729410347062  # half the 95% chi-square quantile, df 1


def toy_panel():
    model = Ar1Model()
    shared = (
        ParamSpec("level", role="shared", transform="identity", perturbation_sd=0.05),
        ParamSpec("proc_sd", role="shared", transform="log", perturbation_sd=0.05),
        ParamSpec("obs_sd", role="shared", transform="log", perturbation_sd=0.05),
    )
    panel = PanelPomp([("a", model, 0.0), ("b", model, 0.0)], shared, ())
    params = PanelParams(
        shared=ParamVector({"level": 1.0, "proc_sd": 0.5, "obs_sd": 1.0}, shared),
        specific={"a": ParamVector({}, ()), "b": ParamVector({}, ())},
    )
    return panel, params


def quadratic_points(noise_sd=0.0, reps=1, seed=0, grid=None, curv=5.0, peak=2.0):
    grid = np.linspace(0, 4, 21) if grid is None else grid
    rng = np.random.default_rng(seed)
    pts = []
    for v in grid:
        for r in range(reps):
            ll = -curv * (v - peak) ** 2 + (rng.normal(0, noise_sd) if noise_sd else 0.0)
            pts.append(ProfilePoint(focal_value=float(v), loglik=float(ll), replicate_id=r))
    return pts


class TestProfileDesign:
    def test_cartesian_count(self):
        panel, _ = toy_panel()
        tasks = profile_design(panel, "proc_sd", np.linspace(0.1, 1.0, 5), n_starts=3)
        assert len(tasks) == 15
        assert {t.replicate_id for t in tasks} == {0, 1, 2}

    def test_unknown_focal_rejected(self):
        panel, _ = toy_panel()
        with pytest.raises(ValueError, match="focal"):
            profile_design(panel, "nope", np.linspace(0, 1, 5), 1)

    def test_grid_validation(self):
        panel, _ = toy_panel()
        with pytest.raises(ValueError, match="at least 5"):
            profile_design(panel, "level", [1.0, 2.0], 1)
        with pytest.raises(ValueError, match="sorted"):
            profile_design(panel, "level", [1, 3, 2, 4, 5], 1)

    def test_pinning_forces_fixed_zero_sd(self):
        panel, params = toy_panel()
        pinned_panel, pinned_params = pin_parameter(panel, params, "proc_sd", 0.77)
        spec = {s.name: s for s in pinned_panel.shared_spec}
        assert spec["proc_sd"].role == "fixed"
        assert spec["proc_sd"].perturbation_sd == 0.0
        assert spec["level"].perturbation_sd == 0.05
        assert pinned_params.shared["proc_sd"] == 0.77


class TestMcap:
    def test_noise_free_quadratic(self):
        res = mcap(quadratic_points(), span=0.75, confidence=0.95)
        assert res.cutoff == pytest.approx(CHI2_CUTOFF, abs=1e-6)
        assert res.mle == pytest.approx(2.0, abs=0.01)
        assert res.grid[0] <= res.mle <= res.grid[-1]
        lo, hi = res.ci
        width = np.sqrt(CHI2_CUTOFF / 5.0)
        assert lo == pytest.approx(2.0 - width, abs=0.02)
        assert hi == pytest.approx(2.0 + width, abs=0.02)
        assert not res.lo_open and not res.hi_open

    def test_replicates_reduced_by_max(self):
        pts = quadratic_points()
        shifted = [
            ProfilePoint(p.focal_value, p.loglik - 5.0, replicate_id=1) for p in pts
        ]
        res_a = mcap(pts)
        res_b = mcap(pts + shifted)  # worse replicates must be ignored
        np.testing.assert_allclose(res_a.smoothed, res_b.smoothed)

    def test_flat_profile_full_grid_open_both_ends(self):
        pts = [
            ProfilePoint(float(v), -10.0, 0) for v in np.linspace(0, 4, 15)
        ]
        res = mcap(pts)
        assert res.lo_open and res.hi_open
        assert res.ci == (0.0, 4.0)

    def test_monotone_profile_one_sided(self):
        grid = np.linspace(0, 4, 15)
        pts = [ProfilePoint(float(v), 3.0 * v, 0) for v in grid]
        res = mcap(pts)
        assert res.hi_open and not res.lo_open

    def test_needs_enough_distinct_points(self):
        with pytest.raises(ValueError, match="10"):
            mcap(quadratic_points(grid=np.linspace(0, 4, 8)))

    def test_coverage_with_noise(self):
        grid = np.linspace(0, 4, 21)
        cover = 0
        widths = []
        for rep in range(100):
            pts = quadratic_points(noise_sd=0.5, reps=3, seed=1000 + rep, grid=grid)
            res = mcap(pts)
            lo, hi = res.ci
            cover += lo <= 2.0 <= hi
            widths.append(hi - lo)
        assert cover >= 90
        assert np.median(widths) > 2 * np.sqrt(CHI2_CUTOFF / 5.0) * 0.8

    def test_noise_widens_intervals(self):
        med = {}
        for sd in (0.0, 0.25, 0.5):
            widths = []
            for rep in range(50):
                pts = quadratic_points(noise_sd=sd, reps=3, seed=50 + rep)
                lo, hi = mcap(pts).ci
                widths.append(hi - lo)
            med[sd] = np.median(widths)
        assert med[0.0] <= med[0.25] + 1e-9
        assert med[0.25] <= med[0.5] + 1e-9

    def test_confidence_validation(self):
        with pytest.raises(ValueError):
            mcap(quadratic_points(), confidence=1.0)


def params_with(level):
    spec = (ParamSpec("level", transform="identity"), ParamSpec("scale", transform="log"))
    shared = ParamVector({"level": level, "scale": 2.0}, spec)
    return PanelParams(shared=shared, specific={})


class TestPoorMansProfile:
    def make_points(self, values, logliks):
        return [
            ProfilePoint(float(v), float(ll), 0, full_params=params_with(v))
            for v, ll in zip(values, logliks)
        ]

    def test_identity_composite_preserves_points(self):
        grid = np.linspace(0, 4, 9)
        pts = self.make_points(grid, -((grid - 2.0) ** 2))
        out = poor_mans_profile(pts, lambda p: p.shared["level"], grid)
        assert [p.focal_value for p in out] == list(grid)
        assert [p.loglik for p in out] == [p.loglik for p in pts]

    def test_two_points_one_bin_keeps_max(self):
        pts = self.make_points([1.0, 1.04], [-3.0, -1.0])
        out = poor_mans_profile(pts, lambda p: p.shared["level"], np.array([0.0, 1.0, 2.0]))
        assert len(out) < 3  # warns for empty bins
        bin1 = [p for p in out if p.focal_value == 1.0][0]
        assert bin1.loglik == -1.0

    def test_empty_bins_warn(self):
        pts = self.make_points([0.0, 2.0], [-1.0, -2.0])
        with pytest.warns(UserWarning, match="dropped"):
            out = poor_mans_profile(pts, lambda p: p.shared["level"], np.array([0.0, 1.0, 2.0]))
        assert [p.focal_value for p in out] == [0.0, 2.0]

    def test_composite_product(self):
        vals = np.linspace(0.5, 3.5, 13)
        pts = self.make_points(vals, -((vals - 2.0) ** 2))
        out = poor_mans_profile(
            pts, lambda p: p.shared["level"] * p.shared["scale"], np.linspace(1, 7, 13)
        )
        assert max(p.loglik for p in out) <= max(p.loglik for p in pts)

    def test_output_feeds_mcap(self):
        vals = np.linspace(0, 4, 21)
        pts = self.make_points(vals, -5 * (vals - 2.0) ** 2)
        out = poor_mans_profile(pts, lambda p: p.shared["level"], vals)
        res = mcap(out)
        assert res.mle == pytest.approx(2.0, abs=0.02)

    def test_requires_full_params(self):
        pts = [ProfilePoint(1.0, -1.0, 0)] * 12
        with pytest.raises(ValueError, match="full_params"):
            poor_mans_profile(pts, lambda p: 1.0, np.linspace(0, 2, 12))


class TestSerialization:
    def test_round_trip_csv(self, tmp_path):
        from panelsmc.profile import load_profile_points, save_profile_points

        pts = quadratic_points(noise_sd=0.1, reps=2, seed=3)
        path = tmp_path / "points.csv"
        save_profile_points(pts, path)
        back = load_profile_points(path)
        assert len(back) == len(pts)
        assert back[0].focal_value == pts[0].focal_value
        assert back[0].loglik == pytest.approx(pts[0].loglik)

    def test_mcap_json(self):
        res = mcap(quadratic_points())
        import json

        payload = json.loads(res.to_json())
        assert payload["mle"] == pytest.approx(2.0, abs=0.01)
        assert payload["cutoff"] == pytest.approx(CHI2_CUTOFF, abs=1e-6)
