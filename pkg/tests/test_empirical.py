import numpy as np
import pytest

from shapley_gla.empirical import (
    MIXED5_MIXING,
    constant_sampler,
    estimate_moments,
    gaussian_sampler,
    get_sampler,
    gla_shapley_estimate,
    sample_empirical_mean,
    sample_empirical_means,
    section42_moments,
    section42_sampler,
)
from shapley_gla.errors import NotPositiveDefinite, ValidationError, ZeroGradient
from shapley_gla.exact import LinearModel, shapley_linear
from shapley_gla.gaussian import make_stream, validate_and_factor
from shapley_gla.empirical import MomentEstimate
from shapley_gla.linearize import BlackBoxModel
from shapley_gla.models import linear_model, sqnorm_model

from conftest import random_cov


def sqnorm_no_gradient(p):
    return BlackBoxModel(lambda x: np.einsum("ij,ij->i", x, x), p, "sqnorm")


class TestSamplers:
    def test_single_summand(self):
        base = section42_sampler()
        assert np.array_equal(sample_empirical_mean(base, 1, make_stream(0)), base(make_stream(0), 1)[0])

    def test_constant(self):
        c = [1.0, -2.0, 3.5]
        np.testing.assert_array_equal(sample_empirical_mean(constant_sampler(c), 17, make_stream(1)), c)

    def test_analytic_mean_of_fourth_component(self):
        mu, _ = section42_moments()
        assert mu[3] == pytest.approx(50 / 3)

    def test_component_means(self):
        draws = section42_sampler()(make_stream(2), 1_000_000)
        mu, sigma = section42_moments()
        se = np.sqrt(np.diag(sigma) / len(draws))
        assert np.all(np.abs(draws.mean(axis=0) - mu) <= 5 * se)

    def test_covariance_matches_analytic(self):
        draws = section42_sampler()(make_stream(3), 400_000)
        _, sigma = section42_moments()
        np.testing.assert_allclose(np.cov(draws, rowvar=False), sigma, rtol=0.03, atol=0.05)

    def test_zeroed_row_gives_constant(self):
        mix = MIXED5_MIXING.copy()
        mix[2] = 0.0
        draws = section42_sampler(mix)(make_stream(4), 100)
        assert np.all(draws[:, 2] == 0.0)

    def test_clt_scaling(self):
        n = 10_000
        means = sample_empirical_means(section42_sampler(), n, 200, make_stream(5))
        _, sigma = section42_moments()
        ratio = means.std(axis=0, ddof=1) / np.sqrt(np.diag(sigma) / n)
        assert np.all(np.abs(ratio - 1) < 0.3)

    def test_chunked_draws(self):
        a = sample_empirical_means(section42_sampler(), 50, 40, make_stream(6), chunk_rows=120)
        b = sample_empirical_means(section42_sampler(), 50, 40, make_stream(6), chunk_rows=120)
        assert a.shape == (40, 5)
        np.testing.assert_array_equal(a, b)

    def test_registry(self):
        assert get_sampler("section42").dim == 5
        assert get_sampler("gaussian", mean=[0, 0], cov=np.eye(2)).dim == 2
        assert get_sampler("constant", value=[1, 2, 3]).dim == 3
        with pytest.raises(ValidationError):
            get_sampler("cauchy")


class TestMoments:
    def test_gaussian_covariance(self, rng):
        sigma = random_cov(rng, 3)
        n = 100_000
        est = estimate_moments(gaussian_sampler([1, 2, 3], sigma), n, n, make_stream(7))
        se = np.sqrt((sigma**2 + np.outer(np.diag(sigma), np.diag(sigma))) / n)
        assert np.all(np.abs(est.cov_hat.entries - sigma) <= 5 * se)

    def test_degenerate_base(self):
        with pytest.raises(NotPositiveDefinite, match="jitter"):
            estimate_moments(constant_sampler([1.0, 2.0]), 10, 10, make_stream(8))

    def test_shared_flag(self):
        base = section42_sampler()
        shared = estimate_moments(base, 999, 300, make_stream(9), shared=True)
        sample = base(make_stream(9), 300)
        np.testing.assert_array_equal(shared.mean_hat, sample.mean(axis=0))
        assert shared.n_mean == 300
        split = estimate_moments(base, 50, 300, make_stream(9))
        assert split.n_mean == 50
        assert not np.array_equal(split.mean_hat, shared.mean_hat)

    def test_too_small(self):
        with pytest.raises(ValidationError):
            estimate_moments(section42_sampler(), 10, 5, make_stream(0))


def _moments(mean, cov, n=100):
    return MomentEstimate(np.asarray(mean, dtype=float), validate_and_factor(cov), n, n)


class TestGla:
    def test_sqnorm_known_moments(self):
        mu, sigma = section42_moments()
        eta = gla_shapley_estimate(sqnorm_model(5), _moments(mu, sigma)).values
        np.testing.assert_allclose(eta, shapley_linear(LinearModel(0, 2 * mu), sigma).values, atol=1e-15)
        np.testing.assert_allclose(
            eta, [0.16446650479088196, 0.40731924775863754, 0.1079772164863034, 0.2732366380691691,
                  0.04700039289500807], atol=1e-12,
        )

    def test_linear_ignores_mean(self, rng):
        cov = random_cov(rng, 3)
        beta = [1.0, -1.0, 2.0]
        a = gla_shapley_estimate(linear_model(beta), _moments([0, 0, 0], cov)).values
        b = gla_shapley_estimate(linear_model(beta), _moments([5, -3, 1], cov)).values
        np.testing.assert_array_equal(a, b)

    def test_symmetric(self):
        eta = gla_shapley_estimate(sqnorm_model(4), _moments(np.ones(4), np.eye(4))).values
        np.testing.assert_allclose(eta, 0.25, atol=1e-15)

    def test_zero_gradient(self):
        with pytest.raises(ZeroGradient):
            gla_shapley_estimate(sqnorm_model(2), _moments([0, 0], np.eye(2)))

    def test_scale_immaterial(self):
        mu, sigma = section42_moments()
        a = gla_shapley_estimate(sqnorm_model(5), _moments(mu, sigma)).values
        b = gla_shapley_estimate(sqnorm_model(5), _moments(mu, sigma / 100)).values
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_finite_difference_route(self):
        est = estimate_moments(section42_sampler(), 200, 200, make_stream(10), shared=True)
        analytic = gla_shapley_estimate(sqnorm_model(5), est).values
        fd = gla_shapley_estimate(sqnorm_no_gradient(5), est, 1e-3).values
        default_rule = gla_shapley_estimate(sqnorm_no_gradient(5), est, n=200).values
        np.testing.assert_allclose(fd, analytic, atol=1e-6)
        np.testing.assert_allclose(default_rule, analytic, atol=1e-6)

    @pytest.mark.slow
    def test_consistency_in_n(self):
        base = section42_sampler()
        reps = {}
        for n in (100, 1000, 10_000):
            reps[n] = np.array([
                gla_shapley_estimate(sqnorm_model(5), estimate_moments(base, n, n, make_stream(11, n, r), shared=True)).values
                for r in range(200)
            ])
        sd = {n: r.std(axis=0, ddof=1) for n, r in reps.items()}
        assert np.all(sd[1000] < sd[100]) and np.all(sd[10_000] < sd[1000])
        assert np.all(np.abs(reps[10_000].mean(axis=0) - reps[1000].mean(axis=0)) <= 2 * sd[1000])
