import numpy as np
import pytest

from coherit.core import (
    GramView,
    InvalidRhoError,
    RegressionSample,
    RngStream,
    ZeroColumnError,
    sample_gaussian_ar1,
    sample_gaussian_cholesky,
    standardize_columns,
)


def rand_sample(n=30, p=7, seed=0):
    g = np.random.default_rng(seed)
    return RegressionSample(g.standard_normal((n, p)), g.standard_normal(n))


class TestRegressionSample:
    def test_col_norms(self):
        s = rand_sample()
        np.testing.assert_allclose(s.col_norms, np.linalg.norm(s.design, axis=0), rtol=1e-12)

    def test_arrays_are_read_only(self):
        s = rand_sample()
        with pytest.raises(ValueError):
            s.design[0, 0] = 1.0

    @pytest.mark.parametrize(
        "X, y",
        [
            (np.ones((1, 3)), np.ones(1)),
            (np.ones((4, 3)), np.ones(5)),
            (np.full((4, 3), np.nan), np.ones(4)),
            (np.ones((4, 3)), np.array([1.0, np.inf, 0.0, 0.0])),
        ],
    )
    def test_rejects_bad_input(self, X, y):
        with pytest.raises(ValueError):
            RegressionSample(X, y)

    def test_subset_keeps_rows(self):
        s = rand_sample()
        sub = s.subset([0, 2, 4])
        np.testing.assert_array_equal(sub.design, s.design[[0, 2, 4]])
        assert sub.n == 3 and sub.p == s.p


class TestGramView:
    @pytest.mark.parametrize("p", [1, 17, 200])
    def test_gram_vec_matches_dense(self, p):
        g = np.random.default_rng(p)
        X = g.standard_normal((50, p))
        v = g.standard_normal(p)
        direct = X.T @ X @ v / 50
        for view in (GramView(X), GramView(X, max_dense_p=0)):
            np.testing.assert_allclose(view.gram_vec(v), direct, rtol=1e-10, atol=1e-12)

    def test_linearity(self):
        g = np.random.default_rng(3)
        X = g.standard_normal((40, 25))
        u, v = g.standard_normal((2, 25))
        view = GramView(X)
        lhs = view.gram_vec(2.5 * u - 0.75 * v)
        rhs = 2.5 * view.gram_vec(u) - 0.75 * view.gram_vec(v)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_large_p_never_materialises(self):
        view = GramView(np.ones((3, 10)), max_dense_p=5)
        assert not view.dense
        with pytest.raises(ValueError):
            view.matrix

    def test_row_space_rank(self):
        X = np.random.default_rng(0).standard_normal((5, 9))
        view = GramView(X)
        assert view.row_space.shape == (9, 5)
        assert view.rank_deficient

    def test_quad(self):
        X = np.random.default_rng(0).standard_normal((12, 4))
        v = np.arange(4.0)
        assert GramView(X).quad(v) == pytest.approx(v @ (X.T @ X / 12) @ v, rel=1e-12)


class TestStandardize:
    def test_constant_column(self):
        s = RegressionSample(np.full((4, 1), 2.0), np.zeros(4))
        out, scales = standardize_columns(s)
        np.testing.assert_allclose(out.design, 1.0)
        np.testing.assert_allclose(scales, [2.0])

    def test_unit_variance_unchanged(self):
        X = np.array([[1.0, -1.0], [-1.0, 1.0], [1.0, 1.0], [-1.0, -1.0]])
        out, scales = standardize_columns(RegressionSample(X, np.zeros(4)))
        np.testing.assert_array_equal(out.design, X)
        np.testing.assert_array_equal(scales, [1.0, 1.0])

    def test_random_round_trip(self):
        s = rand_sample(10, 3)
        out, scales = standardize_columns(s)
        np.testing.assert_allclose(np.linalg.norm(out.design, axis=0), np.sqrt(10), rtol=1e-12)
        beta = np.array([0.3, -2.0, 1.5])
        beta_std = beta * scales
        np.testing.assert_allclose(out.design @ beta_std, s.design @ beta, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(beta_std / scales, beta, rtol=1e-12)

    def test_zero_column(self):
        X = np.ones((5, 3))
        X[:, 1] = 0.0
        with pytest.raises(ZeroColumnError) as info:
            standardize_columns(RegressionSample(X, np.ones(5)))
        assert info.value.column == 1


class TestSampling:
    def test_independent_rows(self):
        X = sample_gaussian_ar1(10000, 4, 0.0, RngStream(1))
        assert np.all(np.abs(X.var(axis=0) - 1) < 3 / np.sqrt(10000))

    def test_ar1_correlations(self):
        X = sample_gaussian_ar1(20000, 3, 0.8, RngStream(2))
        c = np.corrcoef(X, rowvar=False)
        assert abs(c[0, 1] - 0.8) < 0.02
        assert abs(c[0, 2] - 0.64) < 0.02

    def test_deterministic(self):
        a = sample_gaussian_ar1(20, 30, 0.8, RngStream(5, 3))
        b = sample_gaussian_ar1(20, 30, 0.8, RngStream(5, 3))
        np.testing.assert_array_equal(a, b)
        c = sample_gaussian_ar1(20, 30, 0.8, RngStream(5, 4))
        assert not np.array_equal(a, c)

    @pytest.mark.parametrize("rho", [1.0, -1.0, 1.5])
    def test_invalid_rho(self, rho):
        with pytest.raises(InvalidRhoError):
            sample_gaussian_ar1(3, 3, rho, RngStream(0))

    def test_matches_cholesky_in_distribution(self):
        p = 5
        sigma = 0.8 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        a = sample_gaussian_ar1(50000, p, 0.8, RngStream(7))
        b = sample_gaussian_cholesky(50000, np.linalg.cholesky(sigma), RngStream(8))
        assert np.abs(np.cov(a, rowvar=False) - sigma).max() < 0.02
        assert np.abs(np.cov(b, rowvar=False) - sigma).max() < 0.02

    def test_streams_are_independent_of_consumer(self):
        s = RngStream(11, 2)
        first = s.child(1).standard_normal(5)
        s.child(0).standard_normal(100)
        np.testing.assert_array_equal(s.child(1).standard_normal(5), first)

    def test_seed_validation(self):
        with pytest.raises(ValueError):
            RngStream(-1)
        with pytest.raises(ValueError):
            RngStream(2**64)
