"""scikit-learn compatible estimators.

Labels may be arbitrary; they are mapped to ``0..K-1`` through ``classes_``
(sorted order), so for the binary Neyman-Pearson classifiers the controlled
class is ``classes_[0]``.  ``predict_proba`` always returns the estimated
*clean*-label posterior.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .binary import classify_binary, np_binary_from_params
from .em import EmConfig, em_fit
from .model import NpmcSpec, complete_noise_matrices, make_dataset, posterior
from .npmc import HjConfig, classify_npmc, npmc_from_params
from .umbrella import UmbrellaConfig, fit_umbrella


class NoisyLabelDRM(ClassifierMixin, BaseEstimator):
    """Density ratio model fitted by EM on noisy labels.

    Parameters mirror the EM configuration.  ``t_param`` holds the diagonal
    lower bounds (``t_update="constrained"``) or penalty weights
    (``t_update="penalized"``).
    """

    def __init__(self, basis="identity", epsilon=1e-6, max_iter=2000, n_restarts=5,
                 t_update="plain", t_param=None, ridge=0.0, random_state=0):
        self.basis = basis
        self.epsilon = epsilon
        self.max_iter = max_iter
        self.n_restarts = n_restarts
        self.t_update = t_update
        self.t_param = t_param
        self.ridge = ridge
        self.random_state = random_state

    def _em_config(self) -> EmConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return EmConfig(epsilon=self.epsilon, max_iter=self.max_iter,
                        n_restarts=self.n_restarts, seed=seed, t_update=self.t_update,
                        t_param=self.t_param, ridge=self.ridge)

    def _dataset(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least two classes")
        self.n_features_in_ = X.shape[1]
        return make_dataset(X, codes, K=self.classes_.shape[0], basis=self.basis)

    def _basis_view(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.basis_.transform(X)

    def _store(self, data, params, weights=None, trace=None):
        self.basis_ = data.basis
        self.params_ = params
        self.weights_ = weights
        self.trace_ = trace
        nm = complete_noise_matrices(params.T, params.w)
        self.class_prior_ = np.array(params.w)
        self.transition_matrix_ = np.array(params.T)
        self.confusion_matrix_ = np.array(nm.M)

    def fit(self, X, y):
        data = self._dataset(X, y)
        params, weights, trace = em_fit(data, config=self._em_config())
        self._store(data, params, weights, trace)
        self._fit_task(data)
        return self

    def _fit_task(self, data):
        """Hook for subclasses that build a classifier on top of the fit."""

    def predict_proba(self, X):
        G = self._basis_view(X)
        return posterior(self.params_, G)

    def predict(self, X):
        codes = np.argmax(self.predict_proba(X), axis=1)
        return self.classes_[codes]


class NoisyNPClassifier(NoisyLabelDRM):
    """Binary Neyman-Pearson classifier: type-I error of ``classes_[0]`` near ``alpha``."""

    def __init__(self, alpha=0.05, basis="identity", epsilon=1e-6, max_iter=2000,
                 n_restarts=5, t_update="plain", t_param=None, ridge=0.0, random_state=0):
        super().__init__(basis=basis, epsilon=epsilon, max_iter=max_iter,
                         n_restarts=n_restarts, t_update=t_update, t_param=t_param,
                         ridge=ridge, random_state=random_state)
        self.alpha = alpha

    def _dataset(self, X, y):
        data = super()._dataset(X, y)
        if data.K != 2:
            raise ValueError("NoisyNPClassifier is binary")
        return data

    def _fit_task(self, data):
        self.classifier_ = np_binary_from_params(self.params_, data, self.alpha, self.trace_)
        self.lambda_hat_ = self.classifier_.lambda_hat
        self.threshold_ = self.classifier_.threshold

    def predict(self, X):
        check_is_fitted(self, "classifier_")
        return self.classes_[classify_binary(self.classifier_, self._basis_view(X))]


class NoisyNPMCClassifier(NoisyLabelDRM):
    """Multiclass Neyman-Pearson classifier solved through the Lagrangian dual.

    ``rho`` weights the class errors in the objective; ``alpha`` maps class
    indices (positions in ``classes_``) to their error ceilings.
    """

    def __init__(self, rho=None, alpha=None, basis="identity", epsilon=1e-6,
                 max_iter=2000, n_restarts=5, t_update="plain", t_param=None, ridge=0.0,
                 box_hi=200.0, tol_step=1e-4, n_starts=8, feas_margin=1e-6,
                 random_state=0):
        super().__init__(basis=basis, epsilon=epsilon, max_iter=max_iter,
                         n_restarts=n_restarts, t_update=t_update, t_param=t_param,
                         ridge=ridge, random_state=random_state)
        self.rho = rho
        self.alpha = alpha
        self.box_hi = box_hi
        self.tol_step = tol_step
        self.n_starts = n_starts
        self.feas_margin = feas_margin

    def _spec(self, K) -> NpmcSpec:
        rho = np.ones(K) if self.rho is None else np.asarray(self.rho, dtype=float)
        if rho.shape != (K,):
            raise ValueError(f"rho has {rho.size} entries but there are {K} classes")
        alpha = {} if self.alpha is None else dict(self.alpha)
        return NpmcSpec(rho=rho, alpha=alpha, S=sorted(int(k) for k in alpha))

    def _dataset(self, X, y):
        data = super()._dataset(X, y)
        self._spec(data.K)  # fail before the EM fit on a bad spec
        return data

    def _fit_task(self, data):
        hj = HjConfig(box_hi=self.box_hi, tol_step=self.tol_step, n_starts=self.n_starts,
                      seed=0 if self.random_state is None else int(self.random_state))
        self.classifier_ = npmc_from_params(self.params_, data, self._spec(data.K), hj,
                                            self.feas_margin, self.trace_)
        self.lambda_hat_ = np.array(self.classifier_.lambda_hat.lambda_)
        self.feasibility_ = self.classifier_.feasibility

    def predict(self, X):
        check_is_fitted(self, "classifier_")
        return self.classes_[classify_npmc(self.classifier_, self._basis_view(X))]


class NoisyUmbrellaClassifier(ClassifierMixin, BaseEstimator):
    """Noise-adjusted umbrella classifier with high-probability type-I control.

    ``corruption`` is ``"estimated"`` (read off an EM fit) or a pair
    ``(m0, m1)`` of known levels ``P(Y=0 | noisy 0)`` and ``P(Y=0 | noisy 1)``.
    """

    def __init__(self, alpha=0.05, delta=0.05, corruption="estimated", basis="identity",
                 n_restarts=5, random_state=0):
        self.alpha = alpha
        self.delta = delta
        self.corruption = corruption
        self.basis = basis
        self.n_restarts = n_restarts
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] != 2:
            raise ValueError("the umbrella classifier is binary")
        self.n_features_in_ = X.shape[1]
        data = make_dataset(X, codes, K=2, basis=self.basis)
        seed = 0 if self.random_state is None else int(self.random_state)
        cfg = UmbrellaConfig(alpha=self.alpha, delta=self.delta, corruption=self.corruption,
                             seed=seed)
        self.classifier_ = fit_umbrella(data, cfg, EmConfig(n_restarts=self.n_restarts, seed=seed))
        self.basis_ = data.basis
        self.threshold_ = self.classifier_.threshold
        self.k_star_ = self.classifier_.k_star
        return self

    def decision_function(self, X):
        check_is_fitted(self, "classifier_")
        X = check_array(X)
        return self.classifier_.scores(self.basis_.transform(X)) - self.threshold_

    def predict(self, X):
        codes = (self.decision_function(X) > 0).astype(np.int64)
        return self.classes_[codes]
