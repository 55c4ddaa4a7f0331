import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats
from scipy.special import gammaln

from edlkit import dirichlet as dr
from edlkit.opinion import DirichletParams

alphas = st.integers(2, 8).flatmap(
    lambda c: arrays(np.float64, c, elements=st.floats(0.05, 500.0, allow_nan=False))
)


def mc_de(alpha, n, seed):
    p = np.random.default_rng(seed).dirichlet(alpha, size=n)
    logpdf = gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1) * np.log(p)).sum(axis=1)
    return -logpdf.mean(), logpdf.std() / math.sqrt(n)


class TestMoments:
    def test_expectation(self):
        np.testing.assert_allclose(dr.expectation([1.0, 3.0]), [0.25, 0.75])

    def test_variance_matches_scipy(self):
        a = np.array([0.7, 2.0, 5.5])
        np.testing.assert_allclose(dr.variance(a), stats.dirichlet(a).var(), rtol=1e-13)

    def test_accepts_params_object(self):
        d = DirichletParams([2.0, 2.0])
        assert d.S == 4.0
        np.testing.assert_allclose(dr.expectation(d), [0.5, 0.5])

    def test_batched(self):
        a = np.array([[1.0, 1.0], [2.0, 6.0]])
        np.testing.assert_allclose(dr.expectation(a), [[0.5, 0.5], [0.25, 0.75]])
        assert dr.differential_entropy(a).shape == (2,)

    @pytest.mark.parametrize("bad", [[1.0, 0.0], [1.0, -2.0], [np.nan, 1.0], 3.0])
    def test_invalid_alpha(self, bad):
        with pytest.raises(ValueError):
            dr.expectation(bad)


class TestDifferentialEntropy:
    # integral oracle from mpmath quadrature, frozen
    def test_symmetric_two_two(self):
        assert dr.differential_entropy([2.0, 2.0]) == pytest.approx(-0.125092802561388, abs=1e-12)

    def test_two_two_by_quadrature(self):
        f = lambda p: -6 * p * (1 - p) * mpmath.log(6 * p * (1 - p))  # noqa: E731
        assert dr.differential_entropy([2.0, 2.0]) == pytest.approx(float(mpmath.quad(f, [0, 1])), abs=1e-12)

    def test_five_one(self):
        assert dr.differential_entropy([5.0, 1.0]) == pytest.approx(-0.809437912434100, abs=1e-12)

    def test_uniform_simplex(self):
        # Dir(1,...,1) is uniform on the simplex with density (C-1)!
        for c in (2, 3, 5, 10):
            assert dr.differential_entropy(np.ones(c)) == pytest.approx(-math.lgamma(c), abs=1e-12)

    def test_matches_scipy(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a = np.exp(rng.uniform(-2, 4, size=rng.integers(2, 9)))
            assert dr.differential_entropy(a) == pytest.approx(stats.dirichlet(a).entropy(), rel=1e-10, abs=1e-10)

    def test_monte_carlo(self):
        a = np.array([0.8, 2.0, 4.0])
        est, se = mc_de(a, 400_000, seed=7)
        assert abs(est - dr.differential_entropy(a)) < 4 * se

    @settings(max_examples=50)
    @given(alphas)
    def test_at_most_uniform(self, a):
        assert dr.differential_entropy(a) <= -math.lgamma(a.size) + 1e-9


class TestEntropyMeasures:
    def test_expected_entropy_large_concentration(self):
        # frozen mpmath value; approaches ln 2 as the Dirichlet sharpens
        assert dr.expected_entropy([1000.0, 1000.0]) == pytest.approx(0.692897243059937, abs=1e-12)

    def test_mutual_information_flat(self):
        assert dr.mutual_information([1.0, 1.0]) == pytest.approx(math.log(2) - 0.5, abs=1e-14)

    def test_expected_entropy_flat_beta(self):
        # E[-p ln p - (1-p) ln(1-p)] under U(0,1) is 1/2
        assert dr.expected_entropy([1.0, 1.0]) == pytest.approx(0.5, abs=1e-14)

    def test_categorical_entropy_handles_zero(self):
        assert dr.categorical_entropy([1.0, 0.0]) == 0.0
        assert dr.categorical_entropy([0.5, 0.5]) == pytest.approx(math.log(2))

    @given(alphas)
    def test_mi_identity(self, a):
        lhs = dr.mutual_information(a)
        rhs = dr.categorical_entropy(dr.expectation(a)) - dr.expected_entropy(a)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    @given(alphas)
    def test_mi_non_negative(self, a):
        assert dr.mutual_information(a) >= -1e-12

    @given(alphas, st.floats(1.5, 20.0))
    def test_mi_shrinks_with_concentration(self, a, k):
        assert dr.mutual_information(k * a) < dr.mutual_information(a) + 1e-12

    def test_report(self):
        rep = dr.uncertainty_report([4.0, 1.0, 1.0], lam=1.0)
        assert rep.mp == pytest.approx(4 / 6)
        assert rep.um == pytest.approx(0.5)
        assert rep.mi == pytest.approx(dr.mutual_information([4.0, 1.0, 1.0]))

    def test_uncertainty_mass(self):
        assert dr.uncertainty_mass([2.0, 3.0, 5.0], lam=0.5) == pytest.approx(0.15)


class TestKl:
    def test_exact_reference(self):
        # KL(Dir(1,2) || Dir(1,1)) = ln 2 - 1/2
        assert dr.kl_to_scaled_uniform([1.0, 2.0], 1.0, exact=True) == pytest.approx(math.log(2) - 0.5, abs=1e-14)

    def test_constant_for_unit_lambda_is_minus_lgamma_c(self):
        assert dr.kl_constant(1.0, 4) == pytest.approx(-math.lgamma(4.0), abs=1e-12)

    def test_zero_at_prior(self):
        for lam in (0.1, 1.0, 3.0):
            assert dr.kl_to_scaled_uniform(np.full(5, lam), lam, exact=True) == pytest.approx(0.0, abs=1e-13)

    def test_against_scipy_monte_carlo(self):
        a, lam = np.array([3.0, 0.6, 1.2]), 0.8
        p = np.random.default_rng(11).dirichlet(a, size=400_000)
        diff = stats.dirichlet(a).logpdf(p.T) - stats.dirichlet(np.full(3, lam)).logpdf(p.T)
        se = diff.std() / math.sqrt(diff.size)
        assert abs(diff.mean() - dr.kl_to_scaled_uniform(a, lam, exact=True)) < 4 * se

    @given(alphas, st.floats(0.05, 3.0))
    def test_exact_non_negative(self, a, lam):
        assert dr.kl_to_scaled_uniform(a, lam, exact=True) >= -1e-9 * max(1.0, a.sum())

    @given(alphas, alphas, st.floats(0.05, 3.0))
    def test_truncation_offset_constant(self, a, b, lam):
        if a.size != b.size:
            b = np.resize(b, a.size)
        off_a = dr.kl_to_scaled_uniform(a, lam, exact=True) - dr.kl_to_scaled_uniform(a, lam)
        off_b = dr.kl_to_scaled_uniform(b, lam, exact=True) - dr.kl_to_scaled_uniform(b, lam)
        assert off_a == pytest.approx(off_b, abs=1e-9)

    def test_rejects_non_positive_lambda(self):
        with pytest.raises(ValueError):
            dr.kl_to_scaled_uniform([1.0, 1.0], 0.0)


class TestSampling:
    def test_rows_on_simplex(self):
        p = dr.sample([0.5, 2.0, 7.0], 1000, seed=1)
        assert p.shape == (1000, 3)
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-14)

    def test_moments(self):
        a = np.array([0.7, 1.5, 4.0])
        p = dr.sample(a, 400_000, seed=2)
        se = np.sqrt(dr.variance(a) / p.shape[0])
        assert np.all(np.abs(p.mean(axis=0) - dr.expectation(a)) < 4 * se)
        np.testing.assert_allclose(p.var(axis=0), dr.variance(a), rtol=0.02)

    def test_small_concentration_stays_finite(self):
        logp = dr.sample_log([1e-3, 1e-3, 2.0], 5000, seed=3)
        assert np.all(np.isfinite(logp))
        np.testing.assert_allclose(np.logaddexp.reduce(logp, axis=1), 0.0, atol=1e-12)

    def test_small_concentration_mean(self):
        a = np.array([0.05, 0.2, 0.3])
        p = dr.sample(a, 400_000, seed=4)
        se = np.sqrt(dr.variance(a) / p.shape[0])
        assert np.all(np.abs(p.mean(axis=0) - dr.expectation(a)) < 4 * se)

    def test_seeded(self):
        np.testing.assert_array_equal(dr.sample([1.0, 2.0], 10, seed=5), dr.sample([1.0, 2.0], 10, seed=5))

    def test_log_density_matches_scipy(self):
        a = np.array([1.5, 0.8, 3.0])
        p = dr.sample(a, 50, seed=6)
        np.testing.assert_allclose(dr.log_density(np.log(p), a), stats.dirichlet(a).logpdf(p.T), rtol=1e-10)

    def test_rejects_batches_and_bad_n(self):
        with pytest.raises(ValueError):
            dr.sample(np.ones((2, 3)), 10, seed=0)
        with pytest.raises(ValueError):
            dr.sample([1.0, 1.0], 0, seed=0)
