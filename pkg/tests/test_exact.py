import itertools
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shapley_gla import exact
from shapley_gla.errors import DimensionTooLarge, NumericalError, ValidationError, ZeroVarianceModel
from shapley_gla.exact import (
    LinearModel,
    ShapleyVector,
    aggregate_subset_table,
    binomial_weights,
    block_decompose,
    build_cond_var_table,
    closed_sobol_linear,
    conditional_variance_linear,
    shapley_linear,
    shapley_linear_blockwise,
)

from conftest import linear_cases, random_cov

RHO = np.array([[1.0, 0.5], [0.5, 1.0]])


def brute_cond_var(beta, cov, subset):
    """V(Y | X_u) straight from the precision matrix of the unconditioned block."""
    p = len(beta)
    rest = [i for i in range(p) if i not in subset]
    if not rest:
        return 0.0
    prec = np.linalg.inv(cov)
    schur = np.linalg.inv(prec[np.ix_(rest, rest)])
    return float(beta[rest] @ schur @ beta[rest])


def brute_shapley(beta, cov):
    """Shapley effects by averaging over all p! orderings."""
    p = len(beta)
    eta = np.zeros(p)
    for perm in itertools.permutations(range(p)):
        seen = []
        before = brute_cond_var(beta, cov, seen)
        for i in perm:
            seen.append(i)
            after = brute_cond_var(beta, cov, seen)
            eta[i] += before - after
            before = after
    return eta / (math.factorial(p) * float(beta @ cov @ beta))


class TestConditionalVariance:
    def test_correlated(self):
        assert conditional_variance_linear(LinearModel(0, [0, 1]), RHO, 0b01) == pytest.approx(0.75, abs=1e-15)

    def test_full_is_zero(self, rng):
        assert conditional_variance_linear(LinearModel(0, rng.standard_normal(4)), random_cov(rng, 4), 0b1111) == 0

    def test_independent(self):
        assert conditional_variance_linear(LinearModel(0, [1, 1]), np.eye(2), 0b10) == pytest.approx(1.0)

    def test_empty_is_total(self):
        assert conditional_variance_linear(LinearModel(0, [1, 2]), RHO, 0) == pytest.approx(1 + 4 + 2)


class TestTable:
    def test_additive_independent(self):
        table = build_cond_var_table(LinearModel(0, [1, 1]), np.eye(2))
        np.testing.assert_allclose(table.entries, [2, 1, 1, 0], atol=1e-15)

    def test_scalar(self):
        table = build_cond_var_table(LinearModel(0, [3.0]), [[2.0]])
        np.testing.assert_allclose(table.entries, [18.0, 0.0])

    def test_frozen_three_dim(self):
        cov = np.array([[2, 0.5, 0], [0.5, 1, 0.3], [0, 0.3, 1.5]])
        table = build_cond_var_table(LinearModel(0, [1, 2, 3]), cov)
        expected = [25.1, 20.6, 13.54, 12.574285714285714, 7.76, 3.26, 1.7340425531914894, 0.0]
        np.testing.assert_allclose(table.entries, expected, rtol=1e-12, atol=1e-12)

    def test_agrees_with_schur_route(self, rng):
        cov = random_cov(rng, 6)
        model = LinearModel(0, rng.standard_normal(6))
        table = build_cond_var_table(model, cov)
        for u in range(64):
            assert table[u] == pytest.approx(conditional_variance_linear(model, cov, u), rel=1e-10, abs=1e-12)
            assert table[u] == pytest.approx(brute_cond_var(model.coeffs, cov, list(np.flatnonzero([u >> i & 1 for i in range(6)]))), rel=1e-9, abs=1e-12)

    def test_dimension_cap(self):
        with pytest.raises(DimensionTooLarge, match="blockwise"):
            build_cond_var_table(LinearModel(0, np.ones(26)), np.eye(26))

    @settings(max_examples=40)
    @given(linear_cases(2, 7))
    def test_monotone_under_inclusion(self, case):
        beta, cov = case
        p = len(beta)
        t = build_cond_var_table(LinearModel(0, beta), cov).entries
        assert t[-1] == 0.0
        assert t[0] == pytest.approx(beta @ cov @ beta)
        for u in range(1 << p):
            for i in range(p):
                if not u >> i & 1:
                    assert t[u] >= t[u | 1 << i] - 1e-10 * t[0]


class TestShapley:
    def test_symmetric(self):
        np.testing.assert_allclose(shapley_linear(LinearModel(0, [1, 1]), np.eye(2)).values, [0.5, 0.5])

    def test_independent_closed_form(self):
        np.testing.assert_allclose(shapley_linear(LinearModel(0, [1, 2]), np.eye(2)).values, [0.2, 0.8], atol=1e-15)

    def test_single_active(self):
        eta = shapley_linear(LinearModel(0, [1, 0, 0, 0, 0]), np.eye(5)).values
        np.testing.assert_allclose(eta, [1, 0, 0, 0, 0], atol=1e-15)

    def test_frozen_fig1_gradient_at_n1(self):
        # gradient of the trigonometric test model at mu + 1, covariance A^T A
        from shapley_gla.experiments import fig1_spec
        from shapley_gla.models import fig1_model

        spec = fig1_spec(1)
        beta = fig1_model().gradient(spec.mean)
        eta = shapley_linear(LinearModel(0, beta), spec.cov).values
        np.testing.assert_allclose(
            eta, [0.6779785266874631, 0.04126492033080181, 0.06397867759513337, 0.21677787538660176], atol=1e-12
        )

    @settings(max_examples=25)
    @given(linear_cases(2, 5))
    def test_matches_permutation_average(self, case):
        beta, cov = case
        np.testing.assert_allclose(shapley_linear(LinearModel(0, beta), cov).values, brute_shapley(beta, cov), atol=1e-10)

    def test_zero_model(self):
        with pytest.raises(ZeroVarianceModel):
            shapley_linear(LinearModel(0, [0.0, 0.0]), np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            shapley_linear(LinearModel(0, [1.0, 1.0]), np.eye(3))

    @settings(max_examples=200)
    @given(linear_cases(2, 12))
    def test_sum_to_one_and_nonnegative(self, case):
        beta, cov = case
        eta = shapley_linear(LinearModel(0, beta), cov).values
        assert abs(eta.sum() - 1) <= 1e-10
        assert eta.min() >= -1e-10

    @settings(max_examples=60)
    @given(linear_cases(2, 9), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, case, c):
        beta, cov = case
        eta = shapley_linear(LinearModel(0, beta), cov).values
        np.testing.assert_allclose(shapley_linear(LinearModel(0, beta), c * cov).values, eta, rtol=0, atol=1e-12)
        np.testing.assert_allclose(shapley_linear(LinearModel(0, c * beta), cov).values, eta, rtol=0, atol=1e-12)

    @settings(max_examples=60)
    @given(linear_cases(2, 9), st.randoms(use_true_random=False))
    def test_permutation_equivariance(self, case, r):
        beta, cov = case
        pi = list(range(len(beta)))
        r.shuffle(pi)
        eta = shapley_linear(LinearModel(0, beta), cov).values
        permuted = shapley_linear(LinearModel(0, beta[pi]), cov[np.ix_(pi, pi)]).values
        np.testing.assert_allclose(permuted, eta[pi], rtol=0, atol=1e-12)

    def test_p15_is_fast(self, rng):
        start = time.perf_counter()
        shapley_linear(LinearModel(0, rng.standard_normal(15)), random_cov(rng, 15))
        assert time.perf_counter() - start < 5.0


class TestClosedSobol:
    def test_trivial_subsets(self, rng):
        model, cov = LinearModel(0, rng.standard_normal(3)), random_cov(rng, 3)
        assert closed_sobol_linear(model, cov, 0) == 0.0
        assert closed_sobol_linear(model, cov, 0b111) == 1.0

    def test_correlated(self):
        assert closed_sobol_linear(LinearModel(0, [0, 1]), RHO, 0b01) == pytest.approx(0.25)


class TestAggregation:
    def test_binomial_weights(self):
        np.testing.assert_allclose(binomial_weights(5), [1, 1 / 4, 1 / 6, 1 / 4, 1])
        assert binomial_weights(25)[12] == pytest.approx(1 / math.comb(24, 12), rel=1e-15)

    @given(st.integers(1, 8), st.integers(0, 2**32 - 1))
    def test_efficiency_for_any_set_function(self, p, seed):
        table = np.random.default_rng(seed).standard_normal(1 << p)
        eta = aggregate_subset_table(table, p)
        assert eta.sum() == pytest.approx(table[-1] - table[0], abs=1e-9)

    def test_batched_axes(self, rng):
        tables = rng.standard_normal((3, 2, 16))
        out = aggregate_subset_table(tables, 4)
        assert out.shape == (3, 2, 4)
        np.testing.assert_allclose(out[1, 0], aggregate_subset_table(tables[1, 0], 4))

    def test_flipped_weight_breaks_sum(self, monkeypatch):
        # seeded fault: one wrong binomial weight must be caught by the exact-path invariants
        good = binomial_weights(4).copy()
        bad = good.copy()
        bad[1] *= 2
        monkeypatch.setattr(exact, "binomial_weights", lambda p: bad if p == 4 else good)
        with pytest.raises(NumericalError):
            shapley_linear(LinearModel(0, [1, 2, 3, 4]), np.eye(4) + 0.2)


class TestShapleyVector:
    def test_exact_checks(self):
        with pytest.raises(NumericalError):
            ShapleyVector([0.6, 0.6])
        with pytest.raises(NumericalError):
            ShapleyVector([1.2, -0.2])

    def test_relaxed_for_estimates(self):
        v = ShapleyVector([0.6, 0.6], std_errors=[0.1, 0.1], exact=False)
        assert np.asarray(v).shape == (2,)


class TestBlocks:
    def test_diagonal(self):
        assert block_decompose(np.diag([1.0, 2.0, 3.0])) == [[0], [1], [2]]

    def test_two_dense_blocks(self):
        cov = np.zeros((4, 4))
        cov[:2, :2] = cov[2:, 2:] = RHO
        assert block_decompose(cov) == [[0, 1], [2, 3]]

    def test_interleaved(self):
        cov = np.eye(4)
        cov[0, 3] = cov[3, 0] = 0.3
        assert block_decompose(cov) == [[0, 3], [1], [2]]

    def test_dense(self, rng):
        assert block_decompose(random_cov(rng, 5)) == [[0, 1, 2, 3, 4]]

    def test_blockwise_symmetric(self):
        cov = np.eye(4)
        np.testing.assert_allclose(shapley_linear_blockwise(LinearModel(0, np.ones(4)), cov).values, 0.25)

    @pytest.mark.parametrize("seed", range(10))
    def test_blockwise_equals_full(self, seed):
        rng = np.random.default_rng(seed)
        cov = np.zeros((12, 12))
        for b in range(3):
            cov[4 * b:4 * b + 4, 4 * b:4 * b + 4] = random_cov(rng, 4)
        model = LinearModel(0, rng.standard_normal(12))
        np.testing.assert_allclose(
            shapley_linear_blockwise(model, cov).values, shapley_linear(model, cov).values, atol=1e-10
        )

    def test_zero_block(self):
        cov = np.zeros((4, 4))
        cov[:2, :2] = RHO
        cov[2:, 2:] = np.eye(2)
        model = LinearModel(0, [1.0, 2.0, 0.0, 0.0])
        eta = shapley_linear_blockwise(model, cov).values
        np.testing.assert_array_equal(eta[2:], 0.0)
        np.testing.assert_allclose(eta[:2], shapley_linear(LinearModel(0, [1.0, 2.0]), RHO).values)

    def test_p24_four_blocks(self, rng):
        cov = np.zeros((24, 24))
        for b in range(4):
            cov[6 * b:6 * b + 6, 6 * b:6 * b + 6] = random_cov(rng, 6)
        start = time.perf_counter()
        eta = shapley_linear_blockwise(LinearModel(0, rng.standard_normal(24)), cov)
        assert time.perf_counter() - start < 5.0
        assert eta.values.sum() == pytest.approx(1.0, abs=1e-10)
