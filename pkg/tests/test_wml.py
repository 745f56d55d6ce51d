import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisynp.wml import (
    WmlConvergenceError,
    WmlProblem,
    fit_labels,
    wml_fit,
    wml_gradient,
    wml_objective,
)

from oracles import random_problem, random_coeffs, numeric_grad


class TestObjective:
    def test_uniform_weights_at_zero(self):
        prob = WmlProblem.from_basis(np.zeros((3, 1)), np.full((3, 2), 0.5))
        assert wml_objective(prob, np.zeros((2, 2))) == pytest.approx(-3 * np.log(2))

    def test_single_sample_hand_value(self):
        prob = WmlProblem(np.ones((1, 1)), [[0.0, 1.0]])
        assert wml_objective(prob, [[0.0], [2.0]]) == pytest.approx(2 - np.log1p(np.e ** 2))

    def test_ridge_excludes_intercept(self):
        G = np.array([[0.5]])
        base = WmlProblem.from_basis(G, [[0.0, 1.0]])
        pen = WmlProblem.from_basis(G, [[0.0, 1.0]], ridge=1.0)
        C = np.array([[0.0, 0.0], [7.0, 3.0]])
        assert wml_objective(pen, C) == pytest.approx(wml_objective(base, C) - 9.0)

    def test_general_row_totals(self):
        # the log-partition term carries the total row weight
        prob = WmlProblem(np.ones((1, 1)), [[2.0, 3.0]])
        C = np.array([[0.0], [1.0]])
        assert wml_objective(prob, C) == pytest.approx(3.0 - 5.0 * np.log(1 + np.e))

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            WmlProblem(np.ones((2, 1)), [[1.0, -0.1], [0.5, 0.5]])
        with pytest.raises(ValueError):
            WmlProblem(np.ones((2, 1)), [[1.0, 0.0]])
        with pytest.raises(ValueError):
            wml_objective(WmlProblem(np.ones((1, 1)), [[1.0, 0.0]]), np.zeros((3, 1)))


class TestGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_differences(self, seed):
        r = np.random.default_rng(seed)
        prob = random_problem(r, ridge=0.3 * seed, row_scale=seed % 2 == 1)
        for _ in range(20):
            C = random_coeffs(r, prob)
            a, b = wml_gradient(prob, C)[1:], numeric_grad(prob, C)[1:]
            assert np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12) <= 1e-4


class TestFit:
    def test_balanced_weights_stay_at_zero(self, rng):
        prob = WmlProblem.from_basis(rng.normal(size=(10, 2)), np.full((10, 3), 1 / 3))
        sol = wml_fit(prob)
        np.testing.assert_allclose(sol.coeffs, 0.0, atol=1e-12)
        assert sol.iterations == 0

    def test_separable_needs_ridge(self):
        G = np.array([[-2.0], [-1.0], [1.0], [2.0]])
        y = np.array([0, 0, 1, 1])
        # unpenalized: the gradient only vanishes as the slope runs off
        try:
            slope = abs(wml_fit(WmlProblem.from_labels(G, y, 2), max_iter=60).coeffs[1, 1])
        except WmlConvergenceError as err:
            slope = abs(err.coeffs[1, 1])
        assert slope > 10.0
        prob = WmlProblem.from_labels(G, y, 2, ridge=0.01)
        sol = wml_fit(prob)
        assert np.all(np.isfinite(sol.coeffs))
        np.testing.assert_allclose(numeric_grad(prob, sol.coeffs), 0.0, atol=1e-6)

    def test_recovers_generating_softmax(self):
        r = np.random.default_rng(7)
        n, d = 50000, 2
        G = r.normal(size=(n, d))
        C = np.array([[0, 0, 0], [0.5, 1.0, -0.5], [-0.3, -0.8, 1.2]])
        Z = np.hstack([np.ones((n, 1)), G])
        eta = Z @ C.T
        P = np.exp(eta - eta.max(axis=1, keepdims=True))
        P /= P.sum(axis=1, keepdims=True)
        sol = wml_fit(WmlProblem(Z, P))
        assert np.max(np.abs(sol.coeffs - C)) < 0.05

    def test_monotone_history_and_tolerance(self, rng):
        prob = random_problem(rng, n=200, ridge=0.0)
        sol = wml_fit(prob, tol=1e-10)
        assert sol.grad_norm <= 1e-10
        assert np.all(np.diff(sol.history) >= -1e-12)

    def test_permutation_invariance(self, rng):
        prob = random_problem(rng, n=100)
        perm = rng.permutation(100)
        a = wml_fit(prob).coeffs
        b = wml_fit(WmlProblem(prob.design[perm], prob.weights[perm])).coeffs
        np.testing.assert_allclose(a, b, atol=1e-8)

    def test_zero_weight_rows_ignored(self, rng):
        prob = random_problem(rng, n=50)
        W = np.vstack([prob.weights, np.zeros((5, prob.K))])
        Z = np.vstack([prob.design, rng.normal(size=(5, prob.n_coef))])
        np.testing.assert_allclose(wml_fit(WmlProblem(Z, W)).coeffs, wml_fit(prob).coeffs,
                                   atol=1e-9)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_strict_concavity_unique_optimum(self, seed):
        r = np.random.default_rng(seed)
        prob = random_problem(r, n=30, ridge=0.5)
        a = wml_fit(prob, init=random_coeffs(r, prob)).coeffs
        b = wml_fit(prob, init=random_coeffs(r, prob)).coeffs
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_fit_labels_reference_row(self, rng):
        sol = fit_labels(rng.normal(size=(60, 2)), rng.integers(0, 3, 60), 3, ridge=0.1)
        np.testing.assert_array_equal(sol.coeffs[0], 0.0)
