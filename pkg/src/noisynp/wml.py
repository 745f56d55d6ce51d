"""Weighted multinomial logistic regression fitted by damped Newton.

Every sample contributes one row of the design and a weight for each class,
which is the layout the EM M-step produces: the responsibility of sample ``i``
for class ``k`` is the weight of the pseudo-observation ``(k, z_i)``.  The
reference class 0 has its coefficient row pinned to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


def lse_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp (rows of -inf give -inf)."""
    top = a.max(axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return safe + np.log(np.exp(a - safe[:, None]).sum(axis=1))


def softmax_rows(a: np.ndarray) -> np.ndarray:
    e = np.exp(a - a.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


class WmlConvergenceError(RuntimeError):
    """Newton iterations ran out before the gradient tolerance was met."""

    def __init__(self, message, coeffs=None, grad_norm=np.inf, iterations=0):
        super().__init__(message)
        self.coeffs = coeffs
        self.grad_norm = grad_norm
        self.iterations = iterations


@dataclass(frozen=True)
class WmlProblem:
    """Design with a leading intercept column, class weights and ridge."""

    design: np.ndarray
    weights: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.design, dtype=float))
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        if W.shape[0] != Z.shape[0]:
            raise ValueError("design and weights must have the same number of rows")
        if W.shape[1] < 2:
            raise ValueError("need at least two classes")
        if not np.all(np.isfinite(W)) or np.any(W < 0):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(Z)):
            raise ValueError("design contains non-finite values")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        object.__setattr__(self, "design", Z)
        object.__setattr__(self, "weights", W)

    @classmethod
    def from_basis(cls, G, weights, ridge=0.0) -> "WmlProblem":
        G = np.atleast_2d(np.asarray(G, dtype=float))
        Z = np.hstack([np.ones((G.shape[0], 1)), G])
        return cls(Z, weights, ridge)

    @classmethod
    def from_labels(cls, G, labels, K, ridge=0.0) -> "WmlProblem":
        labels = np.asarray(labels, dtype=np.int64)
        W = np.zeros((labels.shape[0], K))
        W[np.arange(labels.shape[0]), labels] = 1.0
        return cls.from_basis(G, W, ridge)

    @property
    def K(self) -> int:
        return self.weights.shape[1]

    @property
    def n_coef(self) -> int:
        return self.design.shape[1]

    @property
    def row_totals(self) -> np.ndarray:
        return self.weights.sum(axis=1)


@dataclass(frozen=True)
class WmlSolution:
    coeffs: np.ndarray
    final_objective: float
    iterations: int
    grad_norm: float
    history: tuple = field(default=(), repr=False)


def _check_coeffs(problem: WmlProblem, coeffs) -> np.ndarray:
    C = np.asarray(coeffs, dtype=float)
    if C.shape != (problem.K, problem.n_coef):
        raise ValueError(
            f"coefficients must have shape {(problem.K, problem.n_coef)}, got {C.shape}"
        )
    return C


def wml_objective(problem: WmlProblem, coeffs) -> float:
    """Weighted log-likelihood minus the ridge penalty on slopes."""
    C = _check_coeffs(problem, coeffs)
    eta = problem.design @ C.T
    W = problem.weights
    lin = np.sum(W * eta)
    part = np.sum(problem.row_totals * lse_rows(eta))
    return float(lin - part - problem.ridge * np.sum(C[:, 1:] ** 2))


def wml_gradient(problem: WmlProblem, coeffs) -> np.ndarray:
    """Analytic gradient of :func:`wml_objective` (row 0 reported as zero)."""
    C = _check_coeffs(problem, coeffs)
    probs = softmax_rows(problem.design @ C.T)
    resid = problem.weights - problem.row_totals[:, None] * probs
    grad = resid.T @ problem.design
    grad[:, 1:] -= 2.0 * problem.ridge * C[:, 1:]
    grad[0] = 0.0
    return grad


def _free_hessian(problem: WmlProblem, probs: np.ndarray) -> np.ndarray:
    """Hessian over the free rows 1..K-1, flattened row-major."""
    Z = problem.design
    s = problem.row_totals
    P = probs[:, 1:]
    m = P.shape[1]
    q = Z.shape[1]
    # curvature weights per sample: s_i (diag(p_i) - p_i p_i')
    A = -s[:, None, None] * (np.einsum("ia,ab->iab", P, np.eye(m)) - P[:, :, None] * P[:, None, :])
    H = np.einsum("iab,ij,il->ajbl", A, Z, Z).reshape(m * q, m * q)
    if problem.ridge > 0:
        pen = np.zeros(q)
        pen[1:] = 2.0 * problem.ridge
        H -= np.diag(np.tile(pen, m))
    return H


def _grad_norm(problem: WmlProblem, grad: np.ndarray) -> float:
    scale = max(float(problem.weights.sum()), 1.0)
    return float(np.max(np.abs(grad)) / scale)


def wml_fit(problem: WmlProblem, tol: float = 1e-10, max_iter: int = 200,
            init=None) -> WmlSolution:
    """Maximize :func:`wml_objective` by damped Newton with step halving.

    ``grad_norm`` is the max-abs gradient entry divided by the total weight,
    so ``tol`` does not depend on the sample size.  Rows whose weights are all
    zero contribute nothing.  Falls back to a gradient step when the Newton
    system is singular.  Raises :class:`WmlConvergenceError` after
    ``max_iter`` iterations without reaching ``tol``.
    """
    K, q = problem.K, problem.n_coef
    C = np.zeros((K, q)) if init is None else np.array(_check_coeffs(problem, init))
    C[0] = 0.0
    f = wml_objective(problem, C)
    history = [f]
    total = max(float(problem.weights.sum()), 1.0)
    noise = 1e-12 * (1.0 + abs(f))
    for it in range(max_iter + 1):
        grad = wml_gradient(problem, C)
        gnorm = _grad_norm(problem, grad)
        if gnorm <= tol:
            return WmlSolution(C, f, it, gnorm, tuple(history))
        if it == max_iter:
            break
        probs = softmax_rows(problem.design @ C.T)
        g_free = grad[1:].ravel()
        try:
            H = _free_hessian(problem, probs)
            step = np.linalg.solve(-H, g_free)
            if not np.all(np.isfinite(step)) or step @ g_free <= 0:
                raise np.linalg.LinAlgError("not an ascent direction")
        except np.linalg.LinAlgError:
            step = g_free / total
        direction = np.zeros_like(C)
        direction[1:] = step.reshape(K - 1, q)
        t = 1.0
        accepted = False
        for _ in range(60):
            C_new = C + t * direction
            f_new = wml_objective(problem, C_new)
            if np.isfinite(f_new) and f_new >= f - noise:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # no representable ascent left; the gradient is at the noise floor
            logger.debug("wml line search stalled at grad_norm=%.3g", gnorm)
            break
        C, f = C_new, f_new
        noise = 1e-12 * (1.0 + abs(f))
        history.append(f)
    grad = wml_gradient(problem, C)
    gnorm = _grad_norm(problem, grad)
    if gnorm <= tol:
        return WmlSolution(C, f, it, gnorm, tuple(history))
    raise WmlConvergenceError(
        f"weighted multinomial logistic fit did not converge "
        f"(grad_norm={gnorm:.3g} after {it} iterations)",
        coeffs=C, grad_norm=gnorm, iterations=it,
    )


def fit_labels(G, labels, K, ridge=0.0, tol=1e-10, max_iter=200) -> WmlSolution:
    """Plain (unweighted) multinomial logistic regression on hard labels."""
    return wml_fit(WmlProblem.from_labels(G, labels, K, ridge), tol=tol, max_iter=max_iter)


def predict_proba_coeffs(coeffs, G) -> np.ndarray:
    G = np.atleast_2d(np.asarray(G, dtype=float))
    eta = coeffs[:, 0][None, :] + G @ coeffs[:, 1:].T
    return softmax_rows(eta)
