"""Shared domain types for the noisy-label density ratio model.

Conventions used throughout the package:

* labels are 0-based integers in ``[0, K)``; class 0 is the reference class
  of the density ratio model, so ``gamma[0] == 0`` and ``beta[0] == 0``;
* the transition matrix is column-stochastic, ``T[l, k] = P(noisy=l | true=k)``;
* the confusion matrix is row-stochastic, ``M[l, k] = P(true=k | noisy=l)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import logsumexp

MODEL_VERSION = 1

SIMPLEX_TOL = 1e-10


class ModelValidationError(ValueError):
    """Raised when parameters or data violate a model invariant."""


class DegenerateClassError(ModelValidationError):
    """Raised when a class has zero probability mass where a ratio needs it."""

    def __init__(self, message, cls=None):
        super().__init__(message)
        self.cls = cls


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


# --------------------------------------------------------------------------
# Basis functions
# --------------------------------------------------------------------------

BASIS_KINDS = ("identity", "quadratic-diagonal", "quadratic-norm", "custom-table")


@dataclass(frozen=True)
class Basis:
    """Feature map ``g`` applied before the exponential tilt.

    ``identity`` keeps the features, ``quadratic-diagonal`` appends their
    elementwise squares, ``quadratic-norm`` appends the squared norm, and
    ``custom-table`` carries a precomputed design that is only valid for the
    dataset it was built from.
    """

    kind: str = "identity"
    p: int = 1
    table: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ModelValidationError(f"unknown basis kind {self.kind!r}")
        if self.p < 1:
            raise ModelValidationError("basis input dimension must be positive")
        if self.kind == "custom-table":
            if self.table is None:
                raise ModelValidationError("custom-table basis requires a table")
            object.__setattr__(self, "table", _frozen(np.atleast_2d(self.table)))

    @property
    def output_dim(self) -> int:
        if self.kind == "identity":
            return self.p
        if self.kind == "quadratic-diagonal":
            return 2 * self.p
        if self.kind == "quadratic-norm":
            return self.p + 1
        return int(self.table.shape[1])

    def transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "custom-table":
            if X.shape[0] != self.table.shape[0]:
                raise ModelValidationError(
                    f"custom-table basis has {self.table.shape[0]} rows but the "
                    f"dataset has {X.shape[0]}"
                )
            return np.array(self.table)
        if X.shape[1] != self.p:
            raise ModelValidationError(
                f"basis expects {self.p} feature columns, got {X.shape[1]}"
            )
        if self.kind == "identity":
            return X.copy()
        if self.kind == "quadratic-norm":
            return np.hstack([X, np.sum(X * X, axis=1, keepdims=True)])
        return np.hstack([X, X * X])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "p": int(self.p)}

    @classmethod
    def from_name(cls, name: str, p: int) -> "Basis":
        aliases = {"identity": "identity", "linear": "identity",
                   "quad": "quadratic-diagonal",
                   "quadratic": "quadratic-diagonal",
                   "quadratic-diagonal": "quadratic-diagonal",
                   "quad-norm": "quadratic-norm",
                   "quadratic-norm": "quadratic-norm"}
        if name not in aliases:
            raise ModelValidationError(f"unknown basis {name!r}")
        return cls(kind=aliases[name], p=p)


# --------------------------------------------------------------------------
# Dataset
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Features with noisy labels and the basis-expanded design.

    ``true_labels`` is only populated for simulated data.
    """

    features: np.ndarray
    noisy_labels: np.ndarray
    K: int
    basis: Basis
    basis_view: np.ndarray = field(default=None, repr=False)
    true_labels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.noisy_labels)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ModelValidationError("labels must be a vector with one entry per row")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ModelValidationError("labels must be integers")
        y = y.astype(np.int64)
        if self.K < 2:
            raise ModelValidationError("K must be at least 2")
        bad = np.flatnonzero((y < 0) | (y >= self.K))
        if bad.size:
            raise ModelValidationError(
                f"label {y[bad[0]]} at row {bad[0]} outside [0, {self.K})"
            )
        if X.shape[0] < self.K:
            raise ModelValidationError("need at least K samples")
        if not np.all(np.isfinite(X)):
            raise ModelValidationError("features contain non-finite values")
        G = self.basis.transform(X) if self.basis_view is None else np.atleast_2d(
            np.asarray(self.basis_view, dtype=float))
        if G.shape[0] != X.shape[0]:
            raise ModelValidationError("basis view row count does not match features")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "noisy_labels", _frozen(y, np.int64))
        object.__setattr__(self, "basis_view", _frozen(G))
        if self.true_labels is not None:
            t = np.asarray(self.true_labels).astype(np.int64)
            if t.shape != y.shape:
                raise ModelValidationError("true labels must match noisy labels in length")
            object.__setattr__(self, "true_labels", _frozen(t, np.int64))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.basis_view.shape[1]

    def with_labels(self, labels) -> "Dataset":
        """Same features, different observed labels (e.g. the clean ones)."""
        return Dataset(self.features, labels, self.K, self.basis,
                       basis_view=self.basis_view, true_labels=self.true_labels)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        basis = self.basis
        if basis.kind == "custom-table":
            basis = Basis("custom-table", basis.p, table=self.basis_view[idx])
        t = None if self.true_labels is None else self.true_labels[idx]
        return Dataset(self.features[idx], self.noisy_labels[idx], self.K, basis,
                       basis_view=self.basis_view[idx], true_labels=t)


def make_dataset(X, y, K=None, basis="identity", true_labels=None) -> Dataset:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    if K is None:
        K = int(y.max()) + 1 if y.size else 2
    if isinstance(basis, str):
        basis = Basis.from_name(basis, X.shape[1])
    return Dataset(X, y, int(K), basis, true_labels=true_labels)


# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    """Parameters ``(w, gamma, beta, T)`` of the noisy-label DRM."""

    w: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", _frozen(np.ravel(self.w)))
        object.__setattr__(self, "gamma", _frozen(np.ravel(self.gamma)))
        object.__setattr__(self, "beta", _frozen(np.atleast_2d(self.beta)))
        object.__setattr__(self, "T", _frozen(np.atleast_2d(self.T)))

    @property
    def K(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[1]

    def replace(self, **changes) -> "ModelParams":
        fields = {"w": self.w, "gamma": self.gamma, "beta": self.beta, "T": self.T}
        fields.update(changes)
        return ModelParams(**fields)

    def to_dict(self) -> dict:
        return {
            "K": int(self.K),
            "d": int(self.d),
            "w": self.w.tolist(),
            "gamma": self.gamma.tolist(),
            "beta": self.beta.tolist(),
            "T_colmajor": self.T.T.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        T = np.asarray(doc["T_colmajor"], dtype=float).T
        beta = np.asarray(doc["beta"], dtype=float).reshape(int(doc["K"]), int(doc["d"]))
        return cls(w=doc["w"], gamma=doc["gamma"], beta=beta, T=T)


def validate(params: ModelParams, K: int, d: int) -> None:
    """Raise :class:`ModelValidationError` unless ``params`` is a valid model."""
    w, gamma, beta, T = params.w, params.gamma, params.beta, params.T
    if w.shape != (K,) or gamma.shape != (K,) or beta.shape != (K, d) or T.shape != (K, K):
        raise ModelValidationError(
            f"dimension mismatch: expected K={K}, d={d}; got w{w.shape}, "
            f"gamma{gamma.shape}, beta{beta.shape}, T{T.shape}"
        )
    for name, arr in (("w", w), ("gamma", gamma), ("beta", beta), ("T", T)):
        if not np.all(np.isfinite(arr)):
            raise ModelValidationError(f"{name} contains non-finite values")
    if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise ModelValidationError(f"w is not on the simplex (sum={w.sum():.12g})")
    if np.any(T < 0) or np.any(T > 1):
        raise ModelValidationError("T has entries outside [0, 1]")
    col = T.sum(axis=0)
    if np.any(np.abs(col - 1.0) > SIMPLEX_TOL):
        k = int(np.argmax(np.abs(col - 1.0)))
        raise ModelValidationError(
            f"T is not column-stochastic: column {k} sums to {col[k]:.12g}"
        )
    if gamma[0] != 0.0 or np.any(beta[0] != 0.0):
        raise ModelValidationError("anchoring violated: gamma[0] and beta[0] must be 0")


def tilt_logits(params: ModelParams, G) -> np.ndarray:
    """``gamma_k + beta_k' g(x)`` for every row of ``G`` (shape n x K)."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    return params.gamma[None, :] + G @ params.beta.T


def posterior(params: ModelParams, gx) -> np.ndarray:
    """Clean-label posterior ``P(Y=k | x)``.

    Accepts a single basis vector (returns length ``K``) or a matrix of basis
    rows (returns ``n x K``).
    """
    w = params.w
    if np.any(w <= 0):
        k = int(np.flatnonzero(w <= 0)[0])
        raise DegenerateClassError(f"class {k} has zero prior; posterior undefined", k)
    single = np.ndim(gx) == 1
    G = np.atleast_2d(np.asarray(gx, dtype=float))
    # gamma-dagger = gamma + log(wk/w0); the w0 term is common to all classes
    logits = tilt_logits(params, G) + np.log(w)[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    out = np.exp(logits)
    out /= out.sum(axis=1, keepdims=True)
    return out[0] if single else out


def posterior_intercepts(params: ModelParams) -> np.ndarray:
    """``gamma-dagger_k = gamma_k + log(w_k / w_0)``, the posterior logit intercept."""
    return params.gamma + np.log(params.w) - np.log(params.w[0])


# --------------------------------------------------------------------------
# Noise matrices
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseMatrices:
    T: np.ndarray
    M: np.ndarray
    w: np.ndarray
    w_tilde: np.ndarray

    def __post_init__(self):
        for name in ("T", "M", "w", "w_tilde"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))


def complete_noise_matrices(T, w) -> NoiseMatrices:
    """Derive the noisy marginal and confusion matrix from ``(T, w)``."""
    T = np.asarray(T, dtype=float)
    w = np.asarray(w, dtype=float)
    w_tilde = T @ w
    zero = np.flatnonzero(w_tilde <= 0)
    if zero.size:
        raise DegenerateClassError(
            f"noisy class {int(zero[0])} has zero marginal probability", int(zero[0])
        )
    M = T * w[None, :] / w_tilde[:, None]
    return NoiseMatrices(T=T, M=M, w=w, w_tilde=w_tilde)


def noise_from_confusion(M, w_tilde) -> NoiseMatrices:
    """Inverse of :func:`complete_noise_matrices`: start from ``(M, w_tilde)``."""
    M = np.asarray(M, dtype=float)
    w_tilde = np.asarray(w_tilde, dtype=float)
    w = M.T @ w_tilde
    zero = np.flatnonzero(w <= 0)
    if zero.size:
        raise DegenerateClassError(
            f"true class {int(zero[0])} has zero marginal probability", int(zero[0])
        )
    T = w_tilde[:, None] * M / w[None, :]
    return NoiseMatrices(T=T, M=M, w=w, w_tilde=w_tilde)


# --------------------------------------------------------------------------
# NPMC problem definition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NpmcSpec:
    """Weights ``rho``, targets ``alpha`` and constrained classes ``S``."""

    rho: np.ndarray
    alpha: dict
    S: tuple

    def __post_init__(self):
        rho = _frozen(np.ravel(self.rho))
        S = tuple(sorted(int(k) for k in self.S))
        alpha = {int(k): float(v) for k, v in dict(self.alpha).items()}
        K = rho.shape[0]
        if np.any(rho < 0) or not np.any(rho > 0):
            raise ModelValidationError("rho must be nonnegative with a positive entry")
        if len(set(S)) != len(S) or any(k < 0 or k >= K for k in S):
            raise ModelValidationError(f"S must hold distinct classes in [0, {K})")
        for k in S:
            if k not in alpha:
                raise ModelValidationError(f"missing target level for class {k}")
            if not 0.0 < alpha[k] < 1.0:
                raise ModelValidationError(f"alpha[{k}]={alpha[k]} outside (0, 1)")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "alpha", {k: alpha[k] for k in S})

    @property
    def K(self) -> int:
        return self.rho.shape[0]

    def alpha_vector(self) -> np.ndarray:
        return np.array([self.alpha[k] for k in self.S], dtype=float)

    def to_dict(self) -> dict:
        return {"rho": self.rho.tolist(),
                "alpha": {str(k): v for k, v in self.alpha.items()},
                "S": list(self.S)}

    @classmethod
    def from_dict(cls, doc: dict) -> "NpmcSpec":
        return cls(rho=doc["rho"], alpha=doc.get("alpha", {}), S=doc.get("S", []))

    @classmethod
    def from_json(cls, path) -> "NpmcSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Empirical-likelihood weights
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileWeights:
    """Point masses ``p`` on the sample and the multipliers ``nu`` (k >= 1)."""

    p: np.ndarray
    nu: np.ndarray
    log_p: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        p = np.ravel(self.p)
        log_p = np.log(p) if self.log_p is None else np.ravel(self.log_p)
        object.__setattr__(self, "p", _frozen(p))
        object.__setattr__(self, "nu", _frozen(np.ravel(self.nu)))
        object.__setattr__(self, "log_p", _frozen(log_p))

    def constraint_residuals(self, params: ModelParams, G) -> np.ndarray:
        """``[sum p_i - 1, sum p_i exp(tilt_k) - 1 for k >= 1]``."""
        logits = tilt_logits(params, G)
        tilted = np.exp(logsumexp(logits + self.log_p[:, None], axis=0))
        return np.concatenate([[self.p.sum() - 1.0], tilted[1:] - 1.0])


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def model_to_json(params: ModelParams, basis: Basis, extra: Optional[dict] = None) -> dict:
    doc = {"version": MODEL_VERSION}
    doc.update(params.to_dict())
    doc["basis"] = basis.to_dict()
    if extra:
        doc.update(extra)
    return doc


def model_from_json(doc: dict):
    """Return ``(params, basis, doc)``; the raw document keeps extra blocks."""
    if doc.get("version") != MODEL_VERSION:
        raise ModelValidationError(f"unsupported model version {doc.get('version')!r}")
    params = ModelParams.from_dict(doc)
    b = doc["basis"]
    if b["kind"] == "custom-table":
        raise ModelValidationError("custom-table models cannot be reloaded without their table")
    basis = Basis(kind=b["kind"], p=int(b["p"]))
    validate(params, params.K, basis.output_dim)
    return params, basis, doc


def save_model(path, params: ModelParams, basis: Basis, extra: Optional[dict] = None) -> None:
    # repr-based float formatting in json round-trips doubles exactly
    Path(path).write_text(json.dumps(model_to_json(params, basis, extra), indent=2))


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text()))
