import numpy as np
import pytest

from noisynp.datagen import load_scenario, oracle_drm_params, sample_training, stream
from noisynp.em import (
    EmConfig,
    EmFitError,
    ResponsibilityMatrix,
    e_step,
    em_fit,
    fit_identity_noise,
    m_step_T,
    m_step_tilt,
    m_step_w,
    profile_log_el,
    profile_weights,
)
from noisynp.model import (
    DegenerateClassError,
    ModelParams,
    complete_noise_matrices,
    make_dataset,
    validate,
)

from oracles import q2_grid_column


def zero_params(K, d, w=None, T=None):
    return ModelParams(w=np.full(K, 1 / K) if w is None else w, gamma=np.zeros(K),
                       beta=np.zeros((K, d)), T=np.eye(K) if T is None else T)


class TestEStep:
    def test_identity_T_collapses(self, small_noisy):
        om = e_step(zero_params(2, 1), small_noisy).omega
        np.testing.assert_array_equal(om, np.eye(2)[small_noisy.noisy_labels])

    def test_hand_normalization(self):
        T = np.array([[0.8, 0.2], [0.2, 0.8]])
        data = make_dataset([[0.0], [1.0]], [0, 1])
        om = e_step(zero_params(2, 1, T=T), data).omega
        # joint P(clean=k, noisy=0) for uniform classes and zero tilt
        joint = 0.5 * T[0]
        np.testing.assert_allclose(om[0], joint / joint.sum())
        np.testing.assert_allclose(om[0], [0.8, 0.2])

    def test_rows_on_simplex(self, rng, small_noisy):
        T = rng.dirichlet(np.ones(2), size=2).T
        p = ModelParams(w=[0.3, 0.7], gamma=[0, 0.4], beta=[[0], [-1.3]], T=T)
        np.testing.assert_allclose(e_step(p, small_noisy).omega.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_mass_row_names_sample(self):
        data = make_dataset([[0.0], [1.0], [2.0]], [0, 1, 1])
        T = np.array([[1.0, 1.0], [0.0, 0.0]])
        with pytest.raises(DegenerateClassError, match="sample 1"):
            e_step(zero_params(2, 1, T=T), data)


class TestMStepW:
    def test_one_hot_gives_frequencies(self):
        om = ResponsibilityMatrix.from_labels([0, 1, 1, 2], 3)
        np.testing.assert_allclose(m_step_w(om), [0.25, 0.5, 0.25])

    def test_uniform(self):
        np.testing.assert_allclose(m_step_w(ResponsibilityMatrix(np.full((2, 2), 0.5))), [0.5, 0.5])

    def test_simplex(self, rng):
        w = m_step_w(ResponsibilityMatrix(rng.dirichlet(np.ones(4), size=30)))
        assert abs(w.sum() - 1) < 1e-12 and np.all(w >= 0)


class TestMStepT:
    def test_plain_one_hot_is_identity(self):
        y = np.array([0, 1, 2, 2, 1])
        np.testing.assert_allclose(m_step_T(ResponsibilityMatrix.from_labels(y, 3), y), np.eye(3))

    def test_penalized_diagonal_monotone(self, rng):
        om = ResponsibilityMatrix(rng.dirichlet(np.ones(2), size=20))
        y = rng.integers(0, 2, 20)
        diags = [np.diag(m_step_T(om, y, "penalized", [eta, eta])) for eta in (0, 1, 10, 100)]
        assert np.all(np.diff(np.array(diags), axis=0) > 0)

    def test_constrained_active_hits_bound_and_matches_grid(self):
        # noisy label equals the latent class in 60% of the mass of each column
        om = ResponsibilityMatrix(np.array([[1.0, 0.0]] * 6 + [[1.0, 0.0]] * 4
                                           + [[0.0, 1.0]] * 6 + [[0.0, 1.0]] * 4))
        y = np.array([0] * 6 + [1] * 4 + [1] * 6 + [0] * 4)
        plain = m_step_T(om, y)
        np.testing.assert_allclose(np.diag(plain), [0.6, 0.6])
        T = m_step_T(om, y, "constrained", [0.8, 0.8])
        assert T[0, 0] == 0.8 and T[1, 1] == 0.8
        np.testing.assert_allclose(T.sum(axis=0), 1.0, atol=1e-12)
        numer = np.eye(2)[y].T @ om.omega
        for k in range(2):
            np.testing.assert_allclose(T[:, k], q2_grid_column(numer[:, k], k, 0.8), atol=2e-3)

    def test_modes_reduce_to_plain(self, rng):
        om = ResponsibilityMatrix(rng.dirichlet(np.ones(3), size=50))
        y = rng.integers(0, 3, 50)
        plain = m_step_T(om, y)
        assert np.array_equal(m_step_T(om, y, "penalized", [0, 0, 0]), plain)
        assert np.array_equal(m_step_T(om, y, "constrained", [0, 0, 0]), plain)

    def test_columns_stochastic_all_modes(self, rng):
        om = ResponsibilityMatrix(rng.dirichlet(np.ones(3), size=50))
        y = rng.integers(0, 3, 50)
        for mode, vals in (("plain", None), ("penalized", [1, 5, 0]), ("constrained", [0.9] * 3)):
            T = m_step_T(om, y, mode, vals)
            np.testing.assert_allclose(T.sum(axis=0), 1.0, atol=1e-10)
            assert np.all(T >= 0)

    def test_errors(self):
        om = ResponsibilityMatrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
        with pytest.raises(DegenerateClassError):
            m_step_T(om, [0, 1])
        om = ResponsibilityMatrix(np.array([[0.5, 0.5], [0.5, 0.5]]))
        with pytest.raises(ValueError, match="singular"):
            m_step_T(om, [0, 1], "constrained", [1.0, 1.0])


class TestMStepTilt:
    def test_gamma_adjustment_is_count_ratio(self):
        G = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0]])
        y = np.array([0, 0, 0, 1, 1])
        om = ResponsibilityMatrix.from_labels(y, 2)
        gamma, beta, C = m_step_tilt(om, make_dataset(G, y), ridge=0.1)
        assert np.all(np.isfinite(beta))
        assert gamma[1] == pytest.approx(C[1, 0] - np.log(2 / 3), abs=1e-14)

    def test_symmetric_uniform(self):
        G = np.array([[-1.0], [1.0], [-2.0], [2.0]])
        om = ResponsibilityMatrix(np.full((4, 2), 0.5))
        gamma, beta, _ = m_step_tilt(om, make_dataset(G, [0, 1, 0, 1]))
        np.testing.assert_allclose(gamma, 0.0, atol=1e-12)
        np.testing.assert_allclose(beta, 0.0, atol=1e-12)

    def test_clean_labels_recover_closed_form(self):
        sc = load_scenario("binary-A")
        data, _ = sample_training(sc, stream(99, 0, "train"), 20000)
        om = ResponsibilityMatrix.from_labels(data.true_labels, 2)
        gamma, beta, _ = m_step_tilt(om, data)
        g0, b0, _ = oracle_drm_params(sc)
        assert abs(gamma[1] - g0[1]) < 0.1
        assert np.max(np.abs(beta[1] - b0[1])) < 0.1


class TestProfile:
    def test_zero_tilt_uniform_masses(self, small_noisy):
        om = e_step(zero_params(2, 1), small_noisy)
        pw = profile_weights(zero_params(2, 1), om, small_noisy)
        np.testing.assert_allclose(pw.p, 1 / small_noisy.n)
        np.testing.assert_allclose(pw.nu, om.col_means[1:])

    def test_log_el_hand_value(self):
        # a dataset needs n >= K, so use two copies of the one-sample case:
        # each sample adds log(0.5) from the mixture and log(1/2) from its mass
        T = np.full((2, 2), 0.5)
        p = zero_params(2, 1, T=T)
        data = make_dataset([[0.0], [0.0]], [0, 1])
        pw = profile_weights(p, ResponsibilityMatrix(np.full((2, 2), 0.5)), data)
        mixture_part = profile_log_el(p, pw, data) - np.sum(pw.log_p)
        assert mixture_part == pytest.approx(-2 * np.log(2))
        assert profile_log_el(p, pw, data) == pytest.approx(-4 * np.log(2))

    def test_log_el_nonpositive(self, small_noisy):
        params, weights, trace = em_fit(small_noisy, config=EmConfig(n_restarts=1))
        assert profile_log_el(params, weights, small_noisy) <= 0


class TestEmFit:
    def test_fixed_point_from_truth(self, rng):
        X = rng.normal(size=(400, 1))
        y = (X[:, 0] + rng.logistic(size=400) > 0).astype(int)
        data = make_dataset(X, y, K=2)
        truth = fit_identity_noise(data)
        params, _, trace = em_fit(data, config=EmConfig(), init=truth)
        assert trace.iterations <= 2
        np.testing.assert_allclose(params.beta, truth.beta, atol=1e-8)
        np.testing.assert_allclose(params.T, np.eye(2), atol=1e-12)

    def test_case_a_recovers_noise(self, case_a_binary):
        sc, data, nm = case_a_binary
        params, weights, trace = em_fit(data)
        M = complete_noise_matrices(params.T, params.w).M
        assert abs(M[0, 0] - 0.95) < 0.05 and abs(M[1, 0] - 0.05) < 0.05
        gamma, beta, _ = oracle_drm_params(sc)
        # tolerance from a 50-repetition pilot: the sd of each coefficient is about 0.07
        assert abs(params.gamma[1] - gamma[1]) < 0.3
        assert np.max(np.abs(params.beta[1] - beta[1])) < 0.3
        assert trace.converged

    def test_deterministic_and_monotone(self, small_noisy):
        a = em_fit(small_noisy, config=EmConfig(seed=3))
        b = em_fit(small_noisy, config=EmConfig(seed=3))
        assert a.trace.profile_logel_per_iter == b.trace.profile_logel_per_iter
        assert np.all(np.diff(a.trace.profile_logel_per_iter) >= -1e-8)

    def test_restart_selection(self, small_noisy):
        _, _, trace = em_fit(small_noisy, config=EmConfig(n_restarts=4))
        finals = np.array(trace.restart_finals)
        assert trace.restart_index_of_best == int(np.argmax(finals))
        assert trace.profile_logel_per_iter[-1] == finals.max()

    def test_one_more_iteration_is_stationary(self, small_noisy):
        cfg = EmConfig(epsilon=1e-10, n_restarts=1)
        params, _, _ = em_fit(small_noisy, config=cfg)
        again, _, _ = em_fit(small_noisy, config=cfg.replace(max_iter=1), init=params)
        for f in ("w", "gamma", "beta", "T"):
            assert np.max(np.abs(getattr(again, f) - getattr(params, f))) < 1e-3

    def test_permutation_stability(self, small_noisy, rng):
        perm = rng.permutation(small_noisy.n)
        init = fit_identity_noise(small_noisy).replace(T=np.array([[0.9, 0.1], [0.1, 0.9]]))
        a, _, _ = em_fit(small_noisy, init=init)
        b, _, _ = em_fit(small_noisy.subset(perm), init=init)
        for f in ("w", "gamma", "beta", "T"):
            np.testing.assert_allclose(getattr(a, f), getattr(b, f), atol=1e-8)

    def test_penalty_and_bound_zero_match_plain(self, small_noisy):
        cfg = EmConfig(n_restarts=2)
        plain = em_fit(small_noisy, config=cfg).params
        pen = em_fit(small_noisy, config=cfg.replace(t_update="penalized", t_param=(0, 0))).params
        con = em_fit(small_noisy, config=cfg.replace(t_update="constrained", t_param=(0, 0))).params
        for other in (pen, con):
            for f in ("w", "gamma", "beta", "T"):
                assert np.array_equal(getattr(plain, f), getattr(other, f))

    def test_constrained_bounds_hold(self, small_noisy):
        p, _, trace = em_fit(small_noisy, config=EmConfig(t_update="constrained",
                                                          t_param=(0.97, 0.97), n_restarts=2))
        assert np.all(np.diag(p.T) >= 0.97 - 1e-12)
        assert np.all(np.diff(trace.profile_logel_per_iter) >= -1e-8)

    def test_penalized_monotone_objective(self, small_noisy):
        _, _, trace = em_fit(small_noisy, config=EmConfig(t_update="penalized",
                                                          t_param=(5.0, 5.0), n_restarts=2))
        assert np.all(np.diff(trace.profile_logel_per_iter) >= -1e-8)

    def test_intermediate_params_valid(self, small_noisy):
        seen = []

        def cb(t, params, weights, val):
            validate(params, 2, 1)
            seen.append(t)

        em_fit(small_noisy, config=EmConfig(n_restarts=2), callback=cb)
        assert seen

    def test_all_restarts_fail(self):
        # a noisy class that never occurs makes every start degenerate
        data = make_dataset(np.arange(6.0)[:, None], [0, 0, 0, 2, 2, 2], K=3)
        with pytest.raises(EmFitError):
            em_fit(data, config=EmConfig(n_restarts=2))

    def test_k_mismatch(self, small_noisy):
        with pytest.raises(ValueError):
            em_fit(small_noisy, K=3)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EmConfig(epsilon=0)
        with pytest.raises(ValueError):
            EmConfig(t_update="constrained", t_param=(1.2, 0.5))
        with pytest.raises(ValueError):
            EmConfig(t_update="penalized", t_param=(-1.0, 0.5))
        with pytest.raises(ValueError):
            EmConfig(t_update="penalized")

    def test_trace_csv(self, small_noisy, tmp_path):
        _, _, trace = em_fit(small_noisy, config=EmConfig(n_restarts=1))
        trace.to_csv(tmp_path / "t.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "iter,logel" and len(lines) == trace.iterations + 1
        assert float(lines[-1].split(",")[1]) == trace.profile_logel_per_iter[-1]
