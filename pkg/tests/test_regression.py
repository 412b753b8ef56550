import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siglasso.regression import (
    cross_validate,
    fit_lasso,
    kfold_indices,
    lambda_path,
    layer_weights,
    objective,
    proximal_lasso,
    rescale_design,
    soft_threshold,
    theoretical_penalty_constant,
)


def orthonormal_design(M, P, seed):
    """Columns orthogonal to each other and to the constant, each with squared norm M."""
    rng = np.random.default_rng(seed)
    raw = np.column_stack([np.ones(M), rng.standard_normal((M, P))])
    q, _ = np.linalg.qr(raw)
    return q[:, 1:] * math.sqrt(M)


class TestLayerWeights:
    def test_values(self):
        w = layer_weights(3).lambdas
        np.testing.assert_allclose(w, [0, 1, math.sqrt(2) / 2, math.sqrt(3) / 6])

    def test_decreasing_beyond_first(self):
        w = layer_weights(9).lambdas
        assert w[1] == 1.0
        assert np.all(np.diff(w[2:]) < 0)

    def test_column_expansion(self):
        cols = layer_weights(2).column_weights(3)
        assert len(cols) == 13
        assert cols[0] == 0 and np.all(cols[1:4] == 1) and np.allclose(cols[4:], math.sqrt(2) / 2)


class TestTheoreticalConstant:
    def test_plug_in(self):
        M = 37
        got = theoretical_penalty_constant(0, N=1, d=2, p=1, v_eps=1.0, delta_bar=1.0, M=M)
        assert got == pytest.approx(math.sqrt(math.log(2)) / math.sqrt(M))

    def test_monotone_in_d(self):
        vals = [theoretical_penalty_constant(2, 3, d, 1, 0.5, 0.1, 100) for d in range(2, 8)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_inverse_sqrt_m(self):
        a = theoretical_penalty_constant(1, 3, 3, 1, 0.5, 0.1, 100)
        b = theoretical_penalty_constant(1, 3, 3, 1, 0.5, 0.1, 400)
        assert a / b == pytest.approx(2.0)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            theoretical_penalty_constant(0, 1, 1, 1, 1.0, 0.0, 10)
        with pytest.raises(ValueError):
            theoretical_penalty_constant(0, 1, 1, 1, -1.0, 0.5, 10)


class TestRescale:
    X = np.random.default_rng(0).standard_normal((10, 7))

    def test_unit_weights(self):
        np.testing.assert_array_equal(rescale_design(self.X, np.ones(7)), self.X)

    def test_zero_weight_zeroes_columns(self):
        w = np.array([0, 1, 1, 0, 0, 2, 2.0])
        out = rescale_design(self.X, w)
        assert np.all(out[:, 3:5] == 0)
        np.testing.assert_array_equal(out[:, 0], self.X[:, 0])

    def test_round_trip(self):
        w = np.random.default_rng(1).uniform(0.1, 3, 7)
        back = rescale_design(rescale_design(self.X, w), 1 / w)
        np.testing.assert_allclose(back, self.X, rtol=1e-14)


class TestSoftThreshold:
    def test_values(self):
        assert soft_threshold(3.0, 1.0) == 2.0
        assert soft_threshold(-0.5, 1.0) == 0.0
        assert soft_threshold(-4.0, 1.5) == -2.5

    @given(st.floats(-1e6, 1e6))
    def test_no_shrinkage(self, x):
        assert soft_threshold(x, 0.0) == x


class TestFitLasso:
    def test_orthonormal_closed_form(self):
        M, P = 64, 8
        X = orthonormal_design(M, P, 0)
        y = X @ np.linspace(-2, 2, P) + np.random.default_rng(1).standard_normal(M)
        for C in [0.0, 0.1, 0.5, 1.0, 3.0]:
            fit = fit_lasso(X, y, C, tol=1e-12)
            expected = soft_threshold(X.T @ (y - y.mean()) / M, C)
            np.testing.assert_allclose(fit.theta[:, 0], expected, atol=1e-10)

    def test_unpenalized_is_least_squares(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((5, 3))
        y = rng.standard_normal(5)
        fit = fit_lasso(X, y, 0.0, tol=1e-13, max_iter=100_000)
        A = np.column_stack([np.ones(5), X])
        coef = np.linalg.solve(A.T @ A, A.T @ y)
        np.testing.assert_allclose(fit.theta[:, 0], coef[1:], atol=1e-8)
        assert fit.intercept[0] == pytest.approx(coef[0], abs=1e-8)

    def test_zero_above_c_max(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((30, 6))
        y = rng.standard_normal(30)
        c_max = np.max(np.abs((X - X.mean(0)).T @ (y - y.mean()) / 30))
        assert np.all(fit_lasso(X, y, c_max).theta == 0)
        assert np.any(fit_lasso(X, y, 0.9 * c_max).theta != 0)

    def test_constant_column_is_intercept(self):
        rng = np.random.default_rng(4)
        X = np.column_stack([np.ones(20), rng.standard_normal((20, 3))])
        fit = fit_lasso(X, rng.standard_normal(20) + 5, 0.01)
        assert fit.theta[0, 0] == 0.0

    def test_objective_monotone_over_sweeps(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((40, 15))
        X[:, 1] = X[:, 0] + 0.01 * X[:, 1]
        y = X[:, :4] @ [1, -1, 2, 0.5] + 0.1 * rng.standard_normal(40)
        values = []
        for sweeps in range(1, 25):
            fit = fit_lasso(X, y, 0.05, tol=0.0, max_iter=sweeps)
            values.append(objective(X, y, fit.theta, fit.intercept, 0.05))
        assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))

    def test_objective_not_worse_than_zero(self):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((25, 10))
        y = rng.standard_normal(25)
        fit = fit_lasso(X, y, 0.1)
        zero = objective(X, y, np.zeros(10), y.mean(), 0.1)
        assert objective(X, y, fit.theta, fit.intercept, 0.1) <= zero

    def test_kkt(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((50, 30))
        y = X[:, :3] @ [2.0, -1.0, 0.5] + 0.3 * rng.standard_normal(50)
        tol = 1e-6
        for C in np.geomspace(0.5, 0.005, 8):
            fit = fit_lasso(X, y, C, tol=tol)
            Xc = X - X.mean(0)
            grad = Xc.T @ (y - y.mean() - Xc @ fit.theta[:, 0]) / 50
            active = fit.theta[:, 0] != 0
            assert np.all(np.abs(np.abs(grad[active]) - C) <= 10 * tol)
            assert np.all(np.abs(grad[~active]) <= C + 10 * tol)
            assert fit.kkt_residual <= 10 * tol

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((30, 8))
        y = rng.standard_normal(30)
        perm = rng.permutation(30)
        a = fit_lasso(X, y, 0.05, tol=1e-12)
        b = fit_lasso(X[perm], y[perm], 0.05, tol=1e-12)
        np.testing.assert_allclose(a.theta, b.theta, atol=1e-10)

    def test_multi_response_is_columnwise(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((30, 8))
        Y = rng.standard_normal((30, 3))
        joint = fit_lasso(X, Y, 0.05)
        for r in range(3):
            single = fit_lasso(X, Y[:, r], 0.05)
            np.testing.assert_array_equal(joint.theta[:, r], single.theta[:, 0])
            assert joint.intercept[r] == single.intercept[0]

    def test_rejects_non_finite(self):
        X = np.ones((4, 2))
        X[0, 0] = np.nan
        with pytest.raises(ValueError):
            fit_lasso(X, np.zeros(4), 0.1)


class TestRescalingEquivalence:
    @pytest.mark.parametrize("seed", range(5))
    def test_objectives_agree(self, seed):
        rng = np.random.default_rng(seed)
        d, N = 2, 3
        cols = layer_weights(N).column_weights(d)
        X = np.column_stack([np.ones(40), rng.standard_normal((40, len(cols) - 1)) / 3])
        y = X[:, 1:4] @ [1.0, -0.5, 0.2] + 0.1 * rng.standard_normal(40)
        inv = np.where(cols > 0, 1 / np.where(cols > 0, cols, 1), 1.0)
        C = 0.02
        fit = fit_lasso(rescale_design(X, inv), y, C, tol=1e-12)
        theta = fit.theta * inv[:, None]
        direct_theta, direct_b = proximal_lasso(X, y, C, cols)
        via_rescale = objective(X, y, theta, fit.intercept, C, cols)
        direct = objective(X, y, direct_theta, direct_b, C, cols)
        assert via_rescale == pytest.approx(direct, rel=1e-6)


class TestLambdaPath:
    def test_geometric(self):
        X = np.array([[1.0], [-1.0]])
        y = np.array([1.0, -1.0])
        np.testing.assert_allclose(lambda_path(X, y, 3, 0.01), [1, 0.1, 0.01])

    def test_first_gives_zero_fit(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((40, 6))
        y = rng.standard_normal(40)
        path = lambda_path(X, y, 10, 0.01)
        assert np.all(fit_lasso(X, y, path[0]).theta == 0)
        assert np.all(np.diff(path) < 0)

    def test_constant_response(self):
        assert lambda_path(np.random.default_rng(0).standard_normal((5, 2)), np.ones(5), 10, 0.1) == [0.0]


class TestCrossValidate:
    def test_noiseless_prefers_small_penalty(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((60, 10))
        y = X @ rng.standard_normal(10)
        path = lambda_path(X, y, 20, 1e-4)
        cv = cross_validate(X, y, 5, path, seed=1, tol=1e-10)
        assert cv.best_index >= len(path) - 2
        assert cv.error < 1e-5
        assert np.all(np.diff(cv.errors[-5:]) < 0)

    def test_pure_noise_prefers_large_penalty(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((80, 10))
        y = rng.standard_normal(80)
        path = lambda_path(X, y, 20, 1e-3)
        cv = cross_validate(X, y, 5, path, seed=1)
        assert cv.C >= path[5]
        assert cv.errors[0] <= cv.errors[-1]

    def test_deterministic(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((40, 5))
        y = rng.standard_normal(40)
        a = cross_validate(X, y, 4, seed=7)
        b = cross_validate(X, y, 4, seed=7)
        assert a.C == b.C
        np.testing.assert_array_equal(a.errors, b.errors)
        for fa, fb in zip(kfold_indices(40, 4, 7), kfold_indices(40, 4, 7)):
            np.testing.assert_array_equal(fa, fb)

    def test_ties_go_to_larger_penalty(self):
        X = np.random.default_rng(3).standard_normal((20, 3))
        y = np.zeros(20)
        y[0] = 1.0
        cv = cross_validate(X, y, 4, [10.0, 5.0, 1e-9], seed=0)
        assert cv.best_index == 0 or cv.errors[0] > cv.errors.min()

    def test_folds(self):
        with pytest.raises(ValueError):
            kfold_indices(3, 5, 0)
        with pytest.raises(ValueError):
            kfold_indices(10, 1, 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.001, 0.5))
def test_kkt_property(seed, C):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 12))
    y = rng.standard_normal(30)
    fit = fit_lasso(X, y, C, tol=1e-7)
    assert fit.kkt_residual <= 1e-6
