"""EM maximization of the profile empirical likelihood under label noise.

The latent clean labels are the missing data.  Each iteration computes the
responsibilities of the clean classes (E-step), then updates the class
proportions, the transition matrix and the tilt parameters (M-step); the
tilt update is a weighted multinomial logistic regression whose intercepts
are shifted back by ``log(omega_.k / omega_.0)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .model import (
    Dataset,
    DegenerateClassError,
    ModelParams,
    ProfileWeights,
    tilt_logits,
    validate,
)
from .wml import WmlConvergenceError, WmlProblem, lse_rows, wml_fit

logger = logging.getLogger(__name__)

T_UPDATE_MODES = ("plain", "constrained", "penalized")
DEGENERATE_MASS = 1e-8


class EmFitError(RuntimeError):
    """Every restart failed; ``best_trace`` is the longest partial trace seen."""

    def __init__(self, message, best_trace=None, errors=()):
        super().__init__(message)
        self.best_trace = best_trace
        self.errors = list(errors)


@dataclass(frozen=True)
class EmConfig:
    epsilon: float = 1e-6
    max_iter: int = 2000
    n_restarts: int = 5
    seed: int = 0
    t_update: str = "plain"
    # lower bounds xi (constrained) or diagonal penalties eta (penalized)
    t_param: Optional[tuple] = None
    ridge: float = 0.0
    wml_tol: float = 1e-10

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ValueError("max_iter and n_restarts must be positive")
        if self.t_update not in T_UPDATE_MODES:
            raise ValueError(f"t_update must be one of {T_UPDATE_MODES}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.t_update != "plain":
            if self.t_param is None:
                raise ValueError(f"{self.t_update} update needs per-class values")
            vals = np.asarray(self.t_param, dtype=float)
            if self.t_update == "constrained" and np.any((vals < 0) | (vals > 1)):
                raise ValueError("lower bounds xi must lie in [0, 1]")
            if self.t_update == "penalized" and np.any(vals < 0):
                raise ValueError("penalty weights must be nonnegative")
            object.__setattr__(self, "t_param", tuple(float(v) for v in vals))

    def replace(self, **changes) -> "EmConfig":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return EmConfig(**kw)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class ResponsibilityMatrix:
    omega: np.ndarray
    col_means: np.ndarray = field(default=None)

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        om.setflags(write=False)
        cm = om.mean(axis=0)
        cm.setflags(write=False)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "col_means", cm)

    @classmethod
    def from_labels(cls, labels, K) -> "ResponsibilityMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        om = np.zeros((labels.shape[0], K))
        om[np.arange(labels.shape[0]), labels] = 1.0
        return cls(om)


@dataclass(frozen=True)
class EmTrace:
    """Objective after every iteration of the selected restart.

    The recorded value is the profile log-EL, plus ``sum eta_k log T_kk`` in
    penalized mode and minus ``ridge * ||beta||^2`` when a ridge is used; that
    is the quantity each iteration is guaranteed not to decrease.
    """

    profile_logel_per_iter: tuple
    iterations: int
    converged: bool
    restart_index_of_best: int
    restart_finals: tuple = ()

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,logel\n")
            for i, v in enumerate(self.profile_logel_per_iter, start=1):
                fh.write(f"{i},{v!r}\n")


class EmResult(NamedTuple):
    params: ModelParams
    weights: ProfileWeights
    trace: EmTrace


# --------------------------------------------------------------------------
# E-step and M-step pieces
# --------------------------------------------------------------------------

def _log_T_rows(params: ModelParams, labels) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(params.T)[labels]


def e_step(params: ModelParams, data: Dataset) -> ResponsibilityMatrix:
    """Posterior over clean labels given features and observed noisy labels."""
    with np.errstate(divide="ignore"):
        logw = np.log(params.w)
    scores = tilt_logits(params, data.basis_view) + _log_T_rows(params, data.noisy_labels) + logw
    top = scores.max(axis=1, keepdims=True)
    dead = np.flatnonzero(~np.isfinite(top[:, 0]))
    if dead.size:
        i = int(dead[0])
        raise DegenerateClassError(
            f"sample {i} (noisy label {data.noisy_labels[i]}) has zero mass under "
            f"every clean class; T or w is degenerate for this label"
        )
    om = np.exp(scores - top)
    om /= om.sum(axis=1, keepdims=True)
    return ResponsibilityMatrix(om)


def m_step_w(omega: ResponsibilityMatrix) -> np.ndarray:
    w = np.array(omega.col_means)
    return w / w.sum()


def m_step_T(omega: ResponsibilityMatrix, noisy_labels, mode: str = "plain",
             values=None) -> np.ndarray:
    """Closed-form transition matrix update (plain, constrained or penalized).

    ``values`` holds the diagonal lower bounds in constrained mode and the
    diagonal penalty weights in penalized mode.
    """
    om = omega.omega
    K = om.shape[1]
    labels = np.asarray(noisy_labels, dtype=np.int64)
    onehot = np.zeros((labels.shape[0], K))
    onehot[np.arange(labels.shape[0]), labels] = 1.0
    numer = onehot.T @ om
    denom = om.sum(axis=0)
    empty = np.flatnonzero(denom <= 0)
    if empty.size:
        raise DegenerateClassError(f"latent class {int(empty[0])} has no mass", int(empty[0]))
    if mode == "plain":
        T = numer / denom[None, :]
    elif mode == "penalized":
        eta = np.broadcast_to(np.asarray(values, dtype=float), (K,))
        T = (numer + np.diag(eta)) / (denom + eta)[None, :]
    elif mode == "constrained":
        xi = np.broadcast_to(np.asarray(values, dtype=float), (K,))
        T = numer / denom[None, :]
        for k in range(K):
            if T[k, k] >= xi[k]:
                continue
            if xi[k] >= 1.0:
                raise ValueError(
                    f"lower bound xi[{k}]=1 is active; the multiplier formula is singular"
                )
            # closed form of the active-constraint case: diagonal pinned at xi,
            # off-diagonal mass rescaled to 1 - xi
            off = denom[k] - numer[k, k]
            col = numer[:, k] * (1.0 - xi[k]) / off
            col[k] = xi[k]
            T[:, k] = col
    else:
        raise ValueError(f"unknown transition update {mode!r}")
    return T


def constrained_kappa(omega: ResponsibilityMatrix, noisy_labels, xi) -> np.ndarray:
    """KKT multiplier of the diagonal lower bound (meaningful when active)."""
    om = omega.omega
    labels = np.asarray(noisy_labels, dtype=np.int64)
    K = om.shape[1]
    xi = np.broadcast_to(np.asarray(xi, dtype=float), (K,))
    hit = (labels[:, None] == np.arange(K)[None, :]).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sum((hit - xi[None, :]) * om, axis=0) / (xi * (xi - 1.0))


def m_step_tilt(omega: ResponsibilityMatrix, data: Dataset, ridge: float = 0.0,
                init=None, tol: float = 1e-10):
    """Tilt update. Returns ``(gamma, beta, wml_coeffs)``.

    ``wml_coeffs`` holds the intercept-shifted solution and can warm-start the
    next call.
    """
    cm = omega.col_means
    if np.any(cm <= 0):
        k = int(np.flatnonzero(cm <= 0)[0])
        raise DegenerateClassError(f"latent class {k} has no mass", k)
    problem = WmlProblem.from_basis(data.basis_view, omega.omega, ridge)
    sol = wml_fit(problem, tol=tol, init=init)
    C = sol.coeffs
    gamma = C[:, 0] - np.log(cm / cm[0])
    gamma[0] = 0.0
    beta = np.array(C[:, 1:])
    beta[0] = 0.0
    return gamma, beta, C


def profile_weights(params: ModelParams, omega_prev: ResponsibilityMatrix,
                    data: Dataset) -> ProfileWeights:
    """EL point masses with multipliers fixed at the previous column means."""
    cm = omega_prev.col_means
    with np.errstate(divide="ignore"):
        log_cm = np.log(cm)
    logits = tilt_logits(params, data.basis_view)
    log_p = -np.log(data.n) - lse_rows(logits + log_cm[None, :])
    return ProfileWeights(p=np.exp(log_p), nu=np.array(cm[1:]), log_p=log_p)


def profile_log_el(params: ModelParams, weights: ProfileWeights, data: Dataset) -> float:
    """Profile log-EL; ``-inf`` when some sample has zero likelihood."""
    with np.errstate(divide="ignore"):
        logw = np.log(params.w)
    scores = tilt_logits(params, data.basis_view) + _log_T_rows(params, data.noisy_labels) + logw
    per_sample = lse_rows(scores)
    total = float(np.sum(per_sample) + np.sum(weights.log_p))
    if not np.isfinite(total):
        logger.warning("profile log-EL is -inf: some sample has zero likelihood")
        return -np.inf
    return total


def _ascent_objective(params, weights, data, config: EmConfig) -> float:
    val = profile_log_el(params, weights, data)
    if config.t_update == "penalized":
        with np.errstate(divide="ignore"):
            val += float(np.dot(config.t_param, np.log(np.diag(params.T))))
    if config.ridge > 0:
        val -= config.ridge * float(np.sum(params.beta ** 2))
    return val


# --------------------------------------------------------------------------
# Driver
# --------------------------------------------------------------------------

def _project_diagonal(T: np.ndarray, xi) -> np.ndarray:
    T = np.array(T)
    for k, lo in enumerate(xi):
        if T[k, k] < lo:
            off = 1.0 - T[k, k]
            scale = (1.0 - lo) / off if off > 0 else 0.0
            T[:, k] *= scale
            T[k, k] = lo
    return T


def initial_params(data: Dataset, config: EmConfig, rng: np.random.Generator):
    """Random start near the identity-noise regime.

    ``w`` is the noisy label frequency, ``T`` mixes the identity with the
    uniform matrix at a random level in [0.05, 0.3], and the tilt comes from a
    logistic fit on the noisy labels taken as hard responsibilities.
    """
    K = data.K
    hard = ResponsibilityMatrix.from_labels(data.noisy_labels, K)
    cm = hard.col_means
    if np.any(cm <= 0):
        k = int(np.flatnonzero(cm <= 0)[0])
        raise DegenerateClassError(f"no sample carries noisy label {k}", k)
    u = rng.uniform(0.05, 0.3)
    T = (1.0 - u) * np.eye(K) + u / K
    if config.t_update == "constrained":
        T = _project_diagonal(T, config.t_param)
    # a small ridge keeps the start finite when noisy labels are separable
    gamma, beta, C = m_step_tilt(hard, data, ridge=max(config.ridge, 1e-3), tol=config.wml_tol)
    return ModelParams(w=cm / cm.sum(), gamma=gamma, beta=beta, T=T), C


def _wml_init_from(params: ModelParams) -> np.ndarray:
    # coefficients of the weighted fit relate to gamma through the class masses
    C = np.hstack([(params.gamma + np.log(params.w / params.w[0]))[:, None], params.beta])
    C[0] = 0.0
    return C


class _RestartFailure(Exception):
    def __init__(self, cause, trace):
        super().__init__(str(cause))
        self.cause = cause
        self.trace = trace


def _run_em(data: Dataset, config: EmConfig, params: ModelParams, coeffs,
            callback: Optional[Callable] = None):
    prev = -np.inf
    trace = []
    converged = False
    weights = None
    K = data.K
    for t in range(config.max_iter):
        try:
            omega = e_step(params, data)
            cm = omega.col_means
            if np.any(cm < DEGENERATE_MASS):
                k = int(np.argmin(cm))
                raise DegenerateClassError(f"latent class {k} collapsed (mass {cm[k]:.3g})", k)
            w = m_step_w(omega)
            T = m_step_T(omega, data.noisy_labels, config.t_update, config.t_param)
            gamma, beta, coeffs = m_step_tilt(omega, data, config.ridge, init=coeffs,
                                              tol=config.wml_tol)
        except (DegenerateClassError, WmlConvergenceError) as exc:
            raise _RestartFailure(exc, trace) from exc
        params = ModelParams(w=w, gamma=gamma, beta=beta, T=T)
        weights = profile_weights(params, omega, data)
        val = _ascent_objective(params, weights, data, config)
        trace.append(val)
        if callback is not None:
            callback(t + 1, params, weights, val)
        if val - prev < config.epsilon:
            converged = True
            break
        prev = val
    validate(params, K, data.d)
    return params, weights, trace, converged


def em_fit(data: Dataset, K: Optional[int] = None, config: EmConfig = EmConfig(),
           init: Optional[ModelParams] = None,
           callback: Optional[Callable] = None) -> EmResult:
    """Fit the noisy-label DRM by EM with multiple random restarts.

    When ``init`` is given a single run starts from it; otherwise
    ``config.n_restarts`` runs start from :func:`initial_params` with child
    seeds spawned from ``config.seed``.  The run with the largest final
    objective wins (ties go to the lowest restart index).  ``callback`` is
    invoked as ``callback(iteration, params, weights, value)``.
    """
    if K is not None and K != data.K:
        raise ValueError(f"K={K} does not match the dataset's K={data.K}")
    if init is not None:
        validate(init, data.K, data.d)
        starts = [(init, _wml_init_from(init))]
        n_runs = 1
    else:
        starts = None
        n_runs = config.n_restarts
    seeds = np.random.SeedSequence(config.seed).spawn(n_runs)

    best = None
    finals = []
    errors = []
    best_partial = None
    for r in range(n_runs):
        try:
            if starts is not None:
                p0, c0 = starts[r]
            else:
                p0, c0 = initial_params(data, config, np.random.default_rng(seeds[r]))
            params, weights, trace, converged = _run_em(data, config, p0, c0, callback)
        except _RestartFailure as exc:
            logger.info("EM restart %d failed: %s", r, exc.cause)
            errors.append(exc.cause)
            finals.append(-np.inf)
            if best_partial is None or len(exc.trace) > len(best_partial):
                best_partial = list(exc.trace)
            continue
        except (DegenerateClassError, WmlConvergenceError) as exc:
            logger.info("EM restart %d failed to initialize: %s", r, exc)
            errors.append(exc)
            finals.append(-np.inf)
            continue
        finals.append(trace[-1])
        if best is None or trace[-1] > best[2][-1]:
            best = (params, weights, trace, converged, r)
    if best is None:
        raise EmFitError("all EM restarts failed", best_trace=best_partial, errors=errors)
    params, weights, trace, converged, r = best
    em_trace = EmTrace(
        profile_logel_per_iter=tuple(trace),
        iterations=len(trace),
        converged=converged,
        restart_index_of_best=r,
        restart_finals=tuple(finals),
    )
    return EmResult(params, weights, em_trace)


def fit_identity_noise(data: Dataset, ridge: float = 0.0, tol: float = 1e-10) -> ModelParams:
    """Model that takes the observed labels as clean (``T`` fixed at identity).

    This is the EM fixed point when ``T = I``: one M-step on one-hot
    responsibilities.
    """
    hard = ResponsibilityMatrix.from_labels(data.noisy_labels, data.K)
    gamma, beta, _ = m_step_tilt(hard, data, ridge=ridge, tol=tol)
    return ModelParams(w=m_step_w(hard), gamma=gamma, beta=beta, T=np.eye(data.K))
