import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from panelsmc import (
    AicRow,
    DataError,
    GlmmSpec,
    Observation,
    PanelDataset,
    aic,
    aic_table,
    conditional_loglik_compare,
    glmm_fit,
    glmm_loglik,
    nbinom_logpmf,
    nbinom_rvs,
    score_external_predictions,
)


def simulate_glmm(spec: GlmmSpec, n_units, times, rng):
    units = []
    for _ in range(n_units):
        b = rng.normal(0, spec.random_intercept_sd)
        eta = sum(beta * times**k for k, beta in enumerate(spec.coefficients)) + b
        counts = nbinom_rvs(np.exp(eta), spec.dispersion, rng, size=len(times))
        units.append((times.astype(float), counts))
    return units


def dense_trapezoid_loglik(spec: GlmmSpec, units, n_grid=200_001):
    """Brute-force marginal likelihood by trapezoid over b in +/- 8 sd."""
    total = 0.0
    s = spec.random_intercept_sd
    bs = np.linspace(-8 * s, 8 * s, n_grid)
    log_prior = -0.5 * (bs / s) ** 2 - 0.5 * np.log(2 * np.pi * s**2)
    for times, counts in units:
        eta = sum(beta * np.asarray(times) ** k for k, beta in enumerate(spec.coefficients))
        logg = log_prior.copy()
        for t_eta, y in zip(eta, counts):
            logg += nbinom_logpmf(int(y), np.exp(t_eta + bs), spec.dispersion)
        m = logg.max()
        total += m + np.log(np.trapezoid(np.exp(logg - m), bs))
    return total


def coefficient_ses(fit, units, degree):
    """Marginal SEs of the trend coefficients from the full observed
    information (polynomial terms are strongly collinear, so profile
    curvatures per coordinate would badly understate the uncertainty)."""
    theta_hat = np.array([
        *fit.spec.coefficients,
        np.log(fit.spec.dispersion),
        np.log(fit.spec.random_intercept_sd),
    ])

    def ll_at(theta):
        spec = GlmmSpec(degree, "y", tuple(theta[: degree + 1]),
                        float(np.exp(theta[degree + 1])), float(np.exp(theta[degree + 2])))
        return glmm_loglik(spec, units)

    p = theta_hat.size
    H = np.zeros((p, p))
    hs = np.maximum(1e-4 * np.abs(theta_hat), 1e-4)
    f0 = ll_at(theta_hat)
    for i in range(p):
        for j in range(i, p):
            ei = np.zeros(p); ei[i] = hs[i]
            ej = np.zeros(p); ej[j] = hs[j]
            if i == j:
                H[i, i] = (ll_at(theta_hat + ei) - 2 * f0 + ll_at(theta_hat - ei)) / hs[i] ** 2
            else:
                H[i, j] = H[j, i] = (
                    ll_at(theta_hat + ei + ej) - ll_at(theta_hat + ei - ej)
                    - ll_at(theta_hat - ei + ej) + ll_at(theta_hat - ei - ej)
                ) / (4 * hs[i] * hs[j])
    cov = np.linalg.inv(-H)
    return np.sqrt(np.diag(cov)[: degree + 1])


class TestGlmmLoglik:
    def test_zero_intercept_sd_is_plain_regression(self):
        spec = GlmmSpec(1, "y", (0.5, 0.02), 2.0, 0.0)
        times = np.arange(1.0, 11.0)
        counts = np.arange(10)
        units = [(times, counts)]
        eta = 0.5 + 0.02 * times
        expected = float(np.sum(nbinom_logpmf(counts, np.exp(eta), 2.0)))
        assert glmm_loglik(spec, units) == expected

    def test_quadrature_matches_trapezoid_single_obs(self):
        spec = GlmmSpec(1, "y", (1.0, 0.05), 1.5, 0.7)
        units = [(np.array([3.0]), np.array([4]))]
        gh = glmm_loglik(spec, units, n_nodes=20)
        ref = dense_trapezoid_loglik(spec, units)
        assert gh == pytest.approx(ref, abs=1e-6)

    def test_quadrature_matches_trapezoid_series(self):
        rng = np.random.default_rng(2)
        spec = GlmmSpec(2, "y", (1.2, 0.15, -0.004), 3.0, 0.5)
        units = simulate_glmm(spec, 4, np.arange(1.0, 11.0), rng)
        gh = glmm_loglik(spec, units, n_nodes=20)
        ref = dense_trapezoid_loglik(spec, units)
        assert gh == pytest.approx(ref, abs=1e-6)

    def test_node_refinement_stable(self):
        rng = np.random.default_rng(5)
        spec = GlmmSpec(1, "y", (1.0, 0.03), 2.0, 0.4)
        units = simulate_glmm(spec, 6, np.arange(1.0, 11.0), rng)
        assert glmm_loglik(spec, units, n_nodes=20) == pytest.approx(
            glmm_loglik(spec, units, n_nodes=40), abs=1e-6
        )

    def test_needs_units(self):
        spec = GlmmSpec(1, "y", (1.0, 0.0), 1.0, 0.1)
        with pytest.raises(ValueError):
            glmm_loglik(spec, [])


class TestGlmmFit:
    def test_recovers_zero_slope(self):
        rng = np.random.default_rng(31)
        truth = GlmmSpec(1, "y", (1.5, 0.0), 3.0, 0.4)
        units = simulate_glmm(truth, 20, np.arange(1.0, 11.0), rng)
        fit = glmm_fit(1, units, seed=0)
        ses = coefficient_ses(fit, units, 1)
        assert abs(fit.spec.coefficients[1]) <= 2 * ses[1]

    def test_nesting_improves_loglik(self):
        rng = np.random.default_rng(8)
        truth = GlmmSpec(3, "y", (1.0, 0.4, -0.05, 0.0012), 4.0, 0.3)
        units = simulate_glmm(truth, 10, np.arange(1.0, 11.0), rng)
        fit1 = glmm_fit(1, units, seed=1)
        start2 = np.array([*fit1.spec.coefficients, 0.0,
                           np.log(fit1.spec.dispersion),
                           np.log(max(fit1.spec.random_intercept_sd, 1e-3))])
        fit2 = glmm_fit(2, units, seed=1, start=start2)
        start3 = np.array([*fit2.spec.coefficients, 0.0,
                           np.log(fit2.spec.dispersion),
                           np.log(max(fit2.spec.random_intercept_sd, 1e-3))])
        fit3 = glmm_fit(3, units, seed=1, start=start3)
        assert fit1.loglik <= fit2.loglik + 1e-6
        assert fit2.loglik <= fit3.loglik + 1e-6

    def test_degree_validation(self):
        with pytest.raises(ValueError):
            glmm_fit(4, [(np.arange(3.0), np.arange(3))])


class TestAic:
    def test_headline_rows(self):
        assert aic(26, -881.19) == pytest.approx(1814.38, abs=1e-12)
        assert aic(20, -891.80) == pytest.approx(1823.60, abs=1e-12)
        assert aic(0, 0.0) == 0.0

    def test_identity_on_rows(self):
        row = AicRow("m", 26, -881.19)
        assert row.aic == 2 * 26 - 2 * (-881.19)

    def test_table_sorted_with_stable_ties(self):
        rows = [
            AicRow("b_model", 2, -1.0),
            AicRow("a_model", 2, -1.0),
            AicRow("best", 1, -0.5),
        ]
        table = aic_table(rows)
        assert table["model"].tolist() == ["best", "a_model", "b_model"]
        assert np.allclose(table["aic"], 2 * table["parameters"] - 2 * table["loglik"])

    def test_negative_params_rejected(self):
        with pytest.raises(ValueError):
            aic(-1, 0.0)


def count_dataset():
    obs = {
        "m1": (
            Observation(7.0, {"S_n": 3, "I_n": 1}),
            Observation(12.0, {"S_n": 5, "I_n": 0}),
        ),
        "m2": (
            Observation(7.0, {"S_n": 2, "I_n": 2}),
        ),
    }
    return PanelDataset(obs)


class TestScoreExternal:
    def predictions_for(self, data, fn):
        preds = {}
        for uid in data.unit_ids:
            for ob in data.obs(uid):
                for label, count in ob.counts.items():
                    preds[(uid, float(ob.time), label)] = fn(count)
        return preds

    def test_perfect_predictions_approach_poisson_bound(self):
        data = count_dataset()
        preds = self.predictions_for(data, lambda c: float(c))
        tau_hi = [1e6, 1e7, 1e8]
        _, ll_hi = score_external_predictions(preds, data, tau_hi)
        from scipy.stats import poisson

        poisson_bound = sum(
            poisson.logpmf(c, max(c, 1e-8))
            for uid in data.unit_ids
            for ob in data.obs(uid)
            for c in ob.counts.values()
        )
        assert ll_hi == pytest.approx(poisson_bound, abs=1e-3)
        _, ll_1e6 = score_external_predictions(preds, data, [1e6])
        _, ll_1e9 = score_external_predictions(preds, data, [1e9])
        assert abs(ll_1e9 - ll_1e6) < 1e-3

    def test_zero_predictions_with_positive_counts_floored(self):
        data = count_dataset()
        preds = self.predictions_for(data, lambda c: 0.0)
        _, ll = score_external_predictions(preds, data, [1.0])
        assert ll < -50  # dominated by floored impossible means

    def test_grid_containing_brent_optimum(self):
        rng = np.random.default_rng(12)
        data = count_dataset()
        preds = self.predictions_for(data, lambda c: float(c) + rng.uniform(0.5, 1.5))

        items = [
            (c, preds[(uid, float(ob.time), lbl)])
            for uid in data.unit_ids
            for ob in data.obs(uid)
            for lbl, c in ob.counts.items()
        ]

        def neg(log_tau):
            return -sum(nbinom_logpmf(c, m, np.exp(log_tau)) for c, m in items)

        res = minimize_scalar(neg, bounds=(-5, 12), method="bounded")
        opt_tau = float(np.exp(res.x))
        grid = np.geomspace(0.01, 1e5, 141)
        best_tau, _ = score_external_predictions(preds, data, grid)
        cell = np.argmin(np.abs(np.log(grid) - np.log(opt_tau)))
        got = np.argmin(np.abs(np.log(grid) - np.log(best_tau)))
        assert abs(int(cell) - int(got)) <= 1

    def test_missing_prediction_rejected(self):
        data = count_dataset()
        preds = self.predictions_for(data, float)
        del preds[("m2", 7.0, "I_n")]
        with pytest.raises(DataError, match="missing"):
            score_external_predictions(preds, data, [1.0])

    def test_best_loglik_is_grid_max(self):
        # the reported score is exactly the max of the pointwise evaluations,
        # whatever the grid scaling
        data = count_dataset()
        preds = self.predictions_for(data, lambda c: float(c) + 1.0)
        items = [
            (c, preds[(uid, float(ob.time), lbl)])
            for uid in data.unit_ids
            for ob in data.obs(uid)
            for lbl, c in ob.counts.items()
        ]
        for scale in (1.0, 2.0, 0.5):
            grid = scale * np.geomspace(0.1, 100, 20)
            best_tau, best_ll = score_external_predictions(preds, data, grid)
            manual = [sum(nbinom_logpmf(c, m, t) for c, m in items) for t in grid]
            assert best_ll == pytest.approx(max(manual), abs=1e-12)
            assert best_tau == pytest.approx(grid[int(np.argmax(manual))])


class TestConditionalCompare:
    def run_pair(self, seed_a=1, seed_b=2, params_b=None):
        from panelsmc import default_params, model_variant, pfilter, simulate

        model = model_variant("srjf")
        pv = default_params(model)
        rng = np.random.default_rng(0)
        times = np.array([5.0 * n + 2 for n in range(1, 7)])
        traj = simulate(model, pv.values, times, 1, rng)[0]
        obs = tuple(
            Observation(t, {"S_n": int(nbinom_rvs(traj[j, 0], 10.0, rng))})
            for j, t in enumerate(times)
        )
        run_a, run_b = {}, {}
        pv_b = pv if params_b is None else pv.replace(**params_b)
        for uid in ("m1", "m2"):
            run_a[uid] = pfilter(model, pv.values, obs, 200,
                                 np.random.default_rng(seed_a),
                                 record_label_logliks=True)
            run_b[uid] = pfilter(model, pv_b.values, obs, 200,
                                 np.random.default_rng(seed_b),
                                 record_label_logliks=True)
        return run_a, run_b

    def test_self_comparison_all_zero(self):
        run_a, _ = self.run_pair()
        cmp = conditional_loglik_compare(run_a, run_a)
        assert np.all(cmp.table["delta"] == 0.0)
        assert cmp.total_delta == 0.0

    def test_telescoping_total(self):
        run_a, run_b = self.run_pair(params_b={"mort_sus_n": 0.3})
        cmp = conditional_loglik_compare(run_a, run_b)
        expected = sum(run_a[u].loglik - run_b[u].loglik for u in run_a)
        assert cmp.total_delta == pytest.approx(expected, abs=1e-12)
        assert cmp.per_unit.sum() == pytest.approx(expected, abs=1e-12)

    def test_label_rows_present(self):
        run_a, run_b = self.run_pair()
        cmp = conditional_loglik_compare(run_a, run_b)
        labels = set(cmp.table["label"])
        assert "(all)" in labels and "S_n" in labels
        assert set(cmp.per_label.index) == {"S_n"}

    def test_mismatched_coverage_rejected(self):
        run_a, run_b = self.run_pair()
        del run_b["m2"]
        with pytest.raises(DataError, match="units"):
            conditional_loglik_compare(run_a, run_b)
