"""Noise-adjusted Neyman-Pearson umbrella classifier.

The umbrella rule thresholds a score at an order statistic of held-out
noisy class-0 scores.  Under label noise the calibration set is a mixture,
so the rule subtracts an estimate ``D(t)`` of the gap between the clean and
the noisy type-I error before comparing with ``alpha``.  The corruption
levels ``m0 = P(Y=0 | noisy 0)`` and ``m1 = P(Y=0 | noisy 1)`` are either
given or read off the fitted confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.special import betaincinv

from .em import EmConfig, em_fit
from .model import Basis, Dataset, ModelValidationError, complete_noise_matrices
from .wml import fit_labels


def binomial_alpha(k, m, delta):
    """Solve ``P(Binomial(m, a) >= k) = delta`` for ``a``.

    The tail equals the regularized incomplete beta ``I_a(k, m - k + 1)``,
    so the root is its inverse.  Vectorized over ``k``.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    k = np.asarray(k)
    if np.any(k < 1) or np.any(k > m):
        raise ValueError("need 1 <= k <= m")
    out = betaincinv(k, m - k + 1, delta)
    return float(out) if out.ndim == 0 else out


def type1_upper_bounds(m: int, delta: float) -> np.ndarray:
    """``alpha_{k,delta}`` for k = 1..m.

    Thresholding at the k-th smallest of m class-0 scores leaves a type-I
    error ``1 - F(T_(k))`` with ``F(T_(k)) ~ Beta(k, m - k + 1)``; the bound
    exceeded with probability ``delta`` solves
    ``P(Binomial(m, a) >= m - k + 1) = 1 - delta``.
    """
    k = np.arange(1, m + 1)
    return binomial_alpha(m - k + 1, m, 1.0 - delta)


def _ecdf(sorted_scores: np.ndarray, t) -> np.ndarray:
    return np.searchsorted(sorted_scores, t, side="right") / sorted_scores.shape[0]


def d_hat(t, est0_scores, est1_scores, m0: float, m1: float):
    """Raw (signed) estimate of the clean-minus-noisy type-I error gap."""
    if not m0 > m1:
        raise ValueError(f"need m0 > m1, got m0={m0}, m1={m1}")
    s0 = np.sort(np.ravel(est0_scores))
    s1 = np.sort(np.ravel(est1_scores))
    if s0.size == 0 or s1.size == 0:
        raise ValueError("estimation splits must be nonempty")
    out = (1.0 - m0) / (m0 - m1) * (_ecdf(s0, t) - _ecdf(s1, t))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class UmbrellaConfig:
    alpha: float = 0.05
    delta: float = 0.05
    splits0: Tuple[float, float, float] = (0.4, 0.3, 0.3)
    splits1: Tuple[float, float] = (0.5, 0.5)
    # "estimated" or a known pair (m0, m1)
    corruption: Union[str, Tuple[float, float]] = "estimated"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 or not 0.0 < self.delta < 1.0:
            raise ValueError("alpha and delta must lie in (0, 1)")
        for name, sp, size in (("splits0", self.splits0, 3), ("splits1", self.splits1, 2)):
            if len(sp) != size or min(sp) <= 0 or abs(sum(sp) - 1.0) > 1e-9:
                raise ValueError(f"{name} needs {size} positive fractions summing to 1")
        if self.corruption != "estimated":
            m0, m1 = (float(v) for v in self.corruption)
            if not (0.0 <= m1 < m0 <= 1.0):
                raise ValueError("known corruption needs 0 <= m1 < m0 <= 1")
            object.__setattr__(self, "corruption", (m0, m1))

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "delta": self.delta, "splits0": list(self.splits0),
                "splits1": list(self.splits1),
                "corruption": self.corruption if isinstance(self.corruption, str)
                else list(self.corruption), "seed": self.seed}


@dataclass(frozen=True)
class UmbrellaClassifier:
    score_fn: Callable
    threshold: float
    k_star: int
    m: int
    saturated: bool
    m0_used: float
    m1_used: float
    basis: Optional[Basis] = None
    coeffs: Optional[np.ndarray] = None

    def scores(self, G) -> np.ndarray:
        return self.score_fn(np.atleast_2d(G))

    def predict(self, G) -> np.ndarray:
        return (self.scores(G) > self.threshold).astype(np.int64)

    def to_dict(self) -> dict:
        doc = {"k_star": self.k_star, "threshold": self.threshold, "m": self.m,
               "saturated": self.saturated, "m0_used": self.m0_used, "m1_used": self.m1_used}
        if self.coeffs is not None:
            doc["score_coeffs"] = np.asarray(self.coeffs).tolist()
        return doc


def logistic_score_fn(coeffs: np.ndarray) -> Callable:
    """Class-1 logit of a two-class logistic model."""
    c = np.array(coeffs[1] - coeffs[0])
    return lambda G: c[0] + np.atleast_2d(G) @ c[1:]


def _split(idx: np.ndarray, fractions, rng) -> list:
    idx = rng.permutation(idx)
    cuts = np.round(np.cumsum(fractions)[:-1] * idx.shape[0]).astype(int)
    parts = np.split(idx, cuts)
    if any(p.size == 0 for p in parts):
        raise ModelValidationError("a split is empty; need more samples per noisy class")
    return parts


def select_k_star(cal_scores, est0_scores, est1_scores, alpha, delta, m0, m1):
    """Return ``(k_star, threshold, saturated)`` with ``k_star`` 1-based."""
    T = np.sort(np.ravel(cal_scores))
    m = T.shape[0]
    a_k = type1_upper_bounds(m, delta)
    D = np.maximum(d_hat(T, est0_scores, est1_scores, m0, m1), 0.0)
    ok = np.flatnonzero(a_k - D <= alpha)
    if ok.size == 0:
        return m, float(T[-1]), True
    k = int(ok[0]) + 1
    return k, float(T[k - 1]), False


def fit_umbrella(data: Dataset, config: UmbrellaConfig = UmbrellaConfig(),
                 em_config: EmConfig = EmConfig(), score_fn=None) -> UmbrellaClassifier:
    """Split, train the scorer, then pick the order-statistic threshold.

    ``score_fn`` may be a callable ``(G_train, y_train) -> scorer`` where the
    scorer maps basis rows to real scores; the default is the class-1 logit
    of a logistic regression on the training splits.
    """
    if data.K != 2:
        raise ModelValidationError("the umbrella classifier is binary")
    rng = np.random.default_rng(config.seed)
    y = data.noisy_labels
    tr0, est0, cal0 = _split(np.flatnonzero(y == 0), config.splits0, rng)
    tr1, est1 = _split(np.flatnonzero(y == 1), config.splits1, rng)
    train = np.concatenate([tr0, tr1])
    G = data.basis_view
    coeffs = None
    if score_fn is None:
        coeffs = fit_labels(G[train], y[train], 2, ridge=1e-6).coeffs
        scorer = logistic_score_fn(coeffs)
    else:
        scorer = score_fn(G[train], y[train])

    if config.corruption == "estimated":
        params, _, _ = em_fit(data, config=em_config)
        M = complete_noise_matrices(params.T, params.w).M
        m0, m1 = float(M[0, 0]), float(M[1, 0])
        if not m0 > m1:
            raise ModelValidationError(
                f"estimated corruption has m0={m0:.4f} <= m1={m1:.4f}; correction undefined"
            )
    else:
        m0, m1 = config.corruption

    k, thr, sat = select_k_star(scorer(G[cal0]), scorer(G[est0]), scorer(G[est1]),
                                config.alpha, config.delta, m0, m1)
    return UmbrellaClassifier(score_fn=scorer, threshold=thr, k_star=k, m=cal0.shape[0],
                              saturated=sat, m0_used=m0, m1_used=m1, basis=data.basis,
                              coeffs=coeffs)
