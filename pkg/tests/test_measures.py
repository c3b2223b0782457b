import numpy as np
import pytest
from scipy import stats

from panelsmc import MEAN_FLOOR, nbinom_logpmf, nbinom_rvs


class TestLogPmf:
    def test_degenerate_mean_at_zero_count(self):
        assert nbinom_logpmf(0, 0.0, 1.0) == 0.0
        assert nbinom_logpmf(0, MEAN_FLOOR / 2, 3.0) == 0.0

    def test_floored_mean_positive_count_finite(self):
        v = nbinom_logpmf(5, 0.0, 1.0)
        assert np.isfinite(v) and v < -50

    def test_closed_form_value(self):
        # pmf(3; mu=2, tau=1) = (1/3) * (2/3)^3 = 8/81
        assert nbinom_logpmf(3, 2.0, 1.0) == pytest.approx(np.log(8 / 81), abs=1e-12)
        assert nbinom_logpmf(3, 2.0, 1.0) == pytest.approx(-2.315007612992603, abs=1e-12)

    def test_matches_scipy_parameterization(self):
        for mu, tau in [(2.0, 1.0), (5.0, 2.0), (0.3, 0.9), (40.0, 4.1)]:
            ys = np.arange(0, 50)
            ours = nbinom_logpmf(ys, mu, tau)
            ref = stats.nbinom.logpmf(ys, tau, tau / (tau + mu))
            np.testing.assert_allclose(ours, ref, rtol=1e-10)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError, match="tau"):
            nbinom_logpmf(1, 1.0, 0.0)
        with pytest.raises(ValueError, match="nonnegative"):
            nbinom_logpmf(-1, 1.0, 1.0)

    def test_never_nan_on_particle_arrays(self, rng):
        mus = np.concatenate([[0.0, MEAN_FLOOR], rng.uniform(0, 100, 100)])
        out = nbinom_logpmf(7, mus, 0.9)
        assert not np.any(np.isnan(out)) and np.all(np.isfinite(out))

    @pytest.mark.parametrize("mu,tau", [(0.5, 1.0), (5.0, 2.0), (50.0, 10.0)])
    def test_normalization(self, mu, tau):
        # sum over a grid out to mean + 20 sd must catch essentially all mass
        sd = np.sqrt(mu + mu**2 / tau)
        ymax = int(np.ceil(mu + 20 * sd))
        ys = np.arange(0, ymax + 1)
        total = np.exp(nbinom_logpmf(ys, mu, tau)).sum()
        assert total >= 1 - 1e-9
        assert total <= 1 + 1e-12

    def test_normalization_heavy_dispersion(self):
        # at tau < 1 the true distribution keeps more than 1e-9 of its mass
        # beyond mean + 20 sd, so the cutoff must be wider there
        total = np.exp(nbinom_logpmf(np.arange(0, 10_000), 0.5, 0.3)).sum()
        assert total == pytest.approx(1.0, abs=1e-12)


class TestSampler:
    def test_moments_match_variance_identity(self):
        rng = np.random.default_rng(42)
        draws = nbinom_rvs(5.0, 2.0, rng, size=1_000_000)
        assert draws.mean() == pytest.approx(5.0, abs=0.02)
        assert draws.var() == pytest.approx(5.0 + 25.0 / 2.0, abs=0.2)

    @pytest.mark.parametrize("mu,tau", [(2.0, 1.0), (5.0, 2.0), (10.0, 0.7)])
    def test_sampler_matches_pmf(self, mu, tau):
        # chi-square goodness of fit of 1e5 draws against the log pmf
        rng = np.random.default_rng(7)
        draws = nbinom_rvs(mu, tau, rng, size=100_000)
        sd = np.sqrt(mu + mu**2 / tau)
        hi = int(np.ceil(mu + 12 * sd))
        counts = np.bincount(np.minimum(draws, hi), minlength=hi + 1)
        probs = np.exp(nbinom_logpmf(np.arange(hi + 1), mu, tau))
        probs[-1] = max(1.0 - probs[:-1].sum(), 1e-300)
        # pool cells with tiny expectation to keep the test valid
        keep = probs * draws.size >= 5
        pooled_obs = np.concatenate([counts[keep], [counts[~keep].sum()]])
        pooled_exp = np.concatenate([probs[keep], [probs[~keep].sum()]]) * draws.size
        chi2 = stats.chisquare(pooled_obs, pooled_exp, ddof=0)
        assert chi2.pvalue > 0.001

    def test_non_integer_tau_supported(self):
        rng = np.random.default_rng(0)
        draws = nbinom_rvs(3.0, 0.902, rng, size=200_000)
        assert draws.mean() == pytest.approx(3.0, abs=0.05)
        assert draws.var() == pytest.approx(3.0 + 9.0 / 0.902, rel=0.05)
