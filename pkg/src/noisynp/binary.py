"""Binary Neyman-Pearson classification from a fitted density ratio model.

The classifier predicts class 1 when the likelihood ratio
``r(x) = (1 - w) pi(x) / (w (1 - pi(x)))`` reaches a threshold ``lambda``.
The threshold is the smallest jump point of the empirical type-I error
curve ``L(lambda) = n^-1 sum_i (1 - pi_i) 1{lambda <= r_i}`` that stays at or
below ``alpha (1 - w)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .em import EmConfig, EmTrace, em_fit
from .model import Basis, Dataset, ModelParams, ModelValidationError, posterior

PI_CLAMP = 1e-12


def density_ratio_score(pi, w):
    """``(1 - w) pi / (w (1 - pi))``; ``pi = 1`` maps to ``+inf``, ``pi = 0`` to 0."""
    pi = np.asarray(pi, dtype=float)
    if not 0.0 < w < 1.0:
        raise ValueError(f"w must lie in (0, 1), got {w}")
    with np.errstate(divide="ignore"):
        r = (1.0 - w) * pi / (w * (1.0 - pi))
    return r if r.ndim else float(r)


def _clamp(pi):
    return np.clip(np.asarray(pi, dtype=float), PI_CLAMP, 1.0 - PI_CLAMP)


def solve_threshold(pis, w_hat: float, alpha: float) -> float:
    """Smallest jump point ``r_i`` with ``L(r_i) <= alpha (1 - w_hat)``.

    Returns ``inf`` when no jump point qualifies, meaning "never predict 1".
    Tied scores drop their mass together.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    pis = _clamp(np.ravel(pis))
    n = pis.shape[0]
    if n < 1:
        raise ValueError("need at least one sample")
    r = density_ratio_score(pis, w_hat)
    order = np.argsort(r, kind="stable")
    r_sorted = r[order]
    mass = (1.0 - pis[order]) / n
    # L at each distinct jump point = mass of all samples at or above it
    tail = np.cumsum(mass[::-1])[::-1]
    first = np.flatnonzero(np.r_[True, r_sorted[1:] != r_sorted[:-1]])
    ok = np.flatnonzero(tail[first] <= alpha * (1.0 - w_hat))
    if ok.size == 0:
        return float("inf")
    return float(r_sorted[first[ok[0]]])


def empirical_type1(pis, w_hat: float, lam: float) -> float:
    """``L(lambda)`` evaluated directly."""
    pis = _clamp(np.ravel(pis))
    r = density_ratio_score(pis, w_hat)
    return float(np.sum((1.0 - pis) * (lam <= r)) / pis.shape[0])


def posterior_threshold(lambda_hat: float, w_hat: float) -> float:
    """Posterior cut ``t* = lambda w / (1 - w + lambda w)``."""
    if np.isinf(lambda_hat):
        return float("inf")
    return lambda_hat * w_hat / (1.0 - w_hat + lambda_hat * w_hat)


@dataclass(frozen=True)
class BinaryNpClassifier:
    lambda_hat: float
    w_hat: float
    posterior_params: ModelParams
    alpha: float
    basis: Optional[Basis] = None
    trace: Optional[EmTrace] = None

    def __post_init__(self):
        if self.posterior_params.K != 2:
            raise ModelValidationError("binary classifier needs a K=2 model")
        if not 0.0 < self.w_hat < 1.0:
            raise ModelValidationError("w_hat must lie in (0, 1)")
        if not self.lambda_hat > 0:
            raise ModelValidationError("lambda_hat must be positive")

    @property
    def threshold(self) -> float:
        return posterior_threshold(self.lambda_hat, self.w_hat)

    def posterior1(self, gx) -> np.ndarray:
        return posterior(self.posterior_params, np.atleast_2d(gx))[:, 1]

    def to_dict(self) -> dict:
        lam = self.lambda_hat
        return {"lambda_hat": "inf" if np.isinf(lam) else lam,
                "alpha": self.alpha, "w_hat": self.w_hat,
                "posterior_threshold": None if np.isinf(lam) else self.threshold}


def classify_binary(clf: BinaryNpClassifier, gx):
    """1 iff the clamped posterior reaches ``t*``; vectorized over rows."""
    single = np.ndim(gx) == 1
    pi = _clamp(clf.posterior1(gx))
    out = (pi >= clf.threshold).astype(np.int64)
    return int(out[0]) if single else out


def np_binary_from_params(params: ModelParams, data: Dataset, alpha: float,
                          trace: Optional[EmTrace] = None) -> BinaryNpClassifier:
    """Plug a fitted model into the empirical threshold rule on ``data``."""
    w_hat = float(params.w[1])
    pis = posterior(params, data.basis_view)[:, 1]
    lam = solve_threshold(pis, w_hat, alpha)
    return BinaryNpClassifier(lambda_hat=lam, w_hat=w_hat, posterior_params=params,
                              alpha=alpha, basis=data.basis, trace=trace)


def fit_np_binary(data: Dataset, alpha: float, em_config: EmConfig = EmConfig()) -> BinaryNpClassifier:
    """EM fit on noisy labels followed by the empirical threshold rule."""
    if data.K != 2:
        raise ModelValidationError("binary NP classification needs K=2")
    params, _, trace = em_fit(data, config=em_config)
    return np_binary_from_params(params, data, alpha, trace)
