"""Synthetic scenarios: clean samplers, label corruption and oracle tilts.

Randomness
----------
Every draw uses numpy's PCG64 generator.  A root seed fans out through
``numpy.random.SeedSequence(root, spawn_key=(rep, purpose))`` where
``purpose`` is one of :data:`PURPOSES`; see :func:`stream`.  The same
``(root, rep, purpose)`` triple therefore gives the same stream on every
platform and independently of how many repetitions run or in what order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .model import (
    Basis,
    Dataset,
    ModelValidationError,
    NoiseMatrices,
    NpmcSpec,
    complete_noise_matrices,
    noise_from_confusion,
)

PURPOSES = {"train": 0, "test": 1, "fit": 2, "split": 3}

FAMILIES = ("gaussian", "uniform_circle", "student_t")
NOISE_KINDS = ("confusion_rows", "transition_eta")


def stream(root_seed: int, rep: int = 0, purpose: str = "train") -> np.random.Generator:
    """Independent generator for one (repetition, purpose) pair."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(rep), PURPOSES[purpose]))
    return np.random.Generator(np.random.PCG64(ss))


def derived_seed(root_seed: int, rep: int, purpose: str) -> int:
    """A 32-bit seed for APIs that take an integer (EM restarts, splits)."""
    ss = np.random.SeedSequence(int(root_seed), spawn_key=(int(rep), PURPOSES[purpose]))
    return int(ss.generate_state(1)[0])


# --------------------------------------------------------------------------
# Scenario description
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Family:
    """Class-conditional feature law.

    gaussian: ``means`` plus a shared ``cov`` or per-class ``covs``;
    uniform_circle: ``centers`` and ``radius``; student_t: ``means``,
    ``shape`` (scale matrix, not covariance) and ``dof``.
    """

    kind: str
    means: np.ndarray
    cov: Optional[np.ndarray] = None
    covs: Optional[np.ndarray] = None
    radius: float = 1.0
    dof: float = 15.0

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ModelValidationError(f"unknown family {self.kind!r}")
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        object.__setattr__(self, "means", means)
        p = means.shape[1]
        if self.kind in ("gaussian", "student_t"):
            if self.covs is not None:
                if self.kind != "gaussian":
                    raise ModelValidationError("per-class covariances need the gaussian family")
                covs = np.asarray(self.covs, dtype=float)
                if covs.shape != (means.shape[0], p, p):
                    raise ModelValidationError("covs must have shape (K, p, p)")
                object.__setattr__(self, "covs", covs)
            else:
                cov = np.eye(p) if self.cov is None else np.asarray(self.cov, dtype=float)
                if cov.shape != (p, p):
                    raise ModelValidationError("cov must be p x p")
                object.__setattr__(self, "cov", cov)
            for S in self.class_covs():
                if not np.allclose(S, S.T):
                    raise ModelValidationError("covariance matrix is not symmetric")
                if np.linalg.eigvalsh(S).min() <= 0:
                    raise ModelValidationError("covariance matrix is not positive definite")
        if self.kind == "uniform_circle" and (p != 2 or self.radius <= 0):
            raise ModelValidationError("uniform_circle needs 2-D centers and a positive radius")
        if self.kind == "student_t" and self.dof <= 0:
            raise ModelValidationError("dof must be positive")

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def p(self) -> int:
        return self.means.shape[1]

    def class_covs(self):
        if self.covs is not None:
            return list(self.covs)
        return [self.cov] * self.K

    def sample(self, labels, rng: np.random.Generator) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64)
        n, p = labels.shape[0], self.p
        X = np.empty((n, p))
        if self.kind == "uniform_circle":
            r = self.radius * np.sqrt(rng.uniform(size=n))
            th = rng.uniform(0.0, 2.0 * np.pi, size=n)
            X[:, 0] = r * np.cos(th)
            X[:, 1] = r * np.sin(th)
            return X + self.means[labels]
        Z = rng.standard_normal((n, p))
        covs = self.class_covs()
        for k in range(self.K):
            idx = labels == k
            L = np.linalg.cholesky(covs[k])
            X[idx] = Z[idx] @ L.T
        if self.kind == "student_t":
            W = rng.chisquare(self.dof, size=n)
            X /= np.sqrt(W / self.dof)[:, None]
        return X + self.means[labels]

    def to_dict(self) -> dict:
        doc = {"kind": self.kind, "means": self.means.tolist()}
        if self.kind in ("gaussian", "student_t"):
            if self.covs is not None:
                doc["covs"] = self.covs.tolist()
            else:
                doc["shape" if self.kind == "student_t" else "cov"] = self.cov.tolist()
        if self.kind == "uniform_circle":
            doc["radius"] = self.radius
        if self.kind == "student_t":
            doc["dof"] = self.dof
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "Family":
        kind = doc["kind"]
        means = doc.get("means", doc.get("centers"))
        cov = doc.get("cov", doc.get("shape"))
        return cls(kind=kind, means=means, cov=cov, covs=doc.get("covs"),
                   radius=float(doc.get("radius", 1.0)), dof=float(doc.get("dof", 15.0)))


@dataclass(frozen=True)
class NoiseSpec:
    """``confusion_rows``: ``m[l] = P(Y=0 | noisy l)`` for binary problems or
    full rows ``P(Y=. | noisy l)``; ``transition_eta``: symmetric flips."""

    kind: str
    rows: Optional[np.ndarray] = None
    eta: float = 0.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ModelValidationError(f"unknown noise kind {self.kind!r}")
        if self.kind == "confusion_rows":
            rows = np.asarray(self.rows, dtype=float)
            if rows.ndim == 1:
                rows = np.column_stack([rows, 1.0 - rows])
            if np.any(rows < 0) or np.any(rows > 1) or np.any(np.abs(rows.sum(1) - 1) > 1e-12):
                raise ModelValidationError("confusion rows must be probability vectors")
            object.__setattr__(self, "rows", rows)
        elif not 0.0 <= self.eta <= 1.0:
            raise ModelValidationError("eta must lie in [0, 1]")

    def transition(self, K: int) -> np.ndarray:
        if self.kind != "transition_eta":
            raise ModelValidationError("transition() applies to transition_eta noise")
        T = np.full((K, K), self.eta / K)
        np.fill_diagonal(T, 1.0 - (K - 1) * self.eta / K)
        return T

    def to_dict(self) -> dict:
        if self.kind == "confusion_rows":
            return {"kind": self.kind, "rows": self.rows.tolist()}
        return {"kind": self.kind, "eta": self.eta}

    @classmethod
    def from_dict(cls, doc: dict) -> "NoiseSpec":
        if doc["kind"] == "confusion_rows":
            return cls("confusion_rows", rows=doc.get("rows", doc.get("m")))
        return cls("transition_eta", eta=float(doc["eta"]))


@dataclass(frozen=True)
class ScenarioSpec:
    """Complete simulation setting.

    ``design`` is ``per_noisy_class`` (``train_n`` samples for each noisy
    class, true labels drawn from the confusion rows) or ``iid`` (``train_n``
    draws from ``class_probs``).  ``test_design`` is ``per_true_class`` or
    ``iid`` in the same way.  ``task`` holds the default NP problem.
    """

    name: str
    family: Family
    noise: NoiseSpec
    class_probs: Optional[np.ndarray] = None
    basis: str = "identity"
    design: str = "iid"
    train_n: int = 1000
    test_design: str = "iid"
    test_n: int = 20000
    task: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        K = self.family.K
        if self.class_probs is not None:
            w = np.asarray(self.class_probs, dtype=float)
            if w.shape != (K,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ModelValidationError("class_probs must be a length-K simplex vector")
            object.__setattr__(self, "class_probs", w)
        if self.design not in ("iid", "per_noisy_class"):
            raise ModelValidationError(f"unknown design {self.design!r}")
        if self.test_design not in ("iid", "per_true_class"):
            raise ModelValidationError(f"unknown test design {self.test_design!r}")
        if "iid" in (self.design, self.test_design) and self.class_probs is None:
            raise ModelValidationError("iid sampling needs class_probs")
        if self.design == "per_noisy_class" and self.noise.kind != "confusion_rows":
            raise ModelValidationError("per_noisy_class design needs confusion_rows noise")
        if self.noise.kind == "confusion_rows" and self.noise.rows.shape != (K, K):
            raise ModelValidationError("confusion rows must form a K x K matrix")

    @property
    def K(self) -> int:
        return self.family.K

    def basis_obj(self) -> Basis:
        return Basis.from_name(self.basis, self.family.p)

    def npmc_spec(self) -> Optional[NpmcSpec]:
        if self.task.get("type") != "npmc":
            return None
        return NpmcSpec.from_dict(self.task["spec"])

    def replace(self, **changes) -> "ScenarioSpec":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return ScenarioSpec(**kw)

    def to_dict(self) -> dict:
        doc = {"name": self.name, "family": self.family.to_dict(),
               "noise": self.noise.to_dict(), "basis": self.basis,
               "design": self.design, "train_n": self.train_n,
               "test_design": self.test_design, "test_n": self.test_n,
               "task": self.task, "seed": self.seed}
        if self.class_probs is not None:
            doc["class_probs"] = self.class_probs.tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioSpec":
        return cls(name=doc.get("name", "custom"), family=Family.from_dict(doc["family"]),
                   noise=NoiseSpec.from_dict(doc["noise"]),
                   class_probs=doc.get("class_probs"), basis=doc.get("basis", "identity"),
                   design=doc.get("design", "iid"), train_n=int(doc.get("train_n", 1000)),
                   test_design=doc.get("test_design", "iid"),
                   test_n=int(doc.get("test_n", 20000)), task=dict(doc.get("task", {})),
                   seed=int(doc.get("seed", 0)))


def load_scenario(name_or_path) -> ScenarioSpec:
    """Load a shipped scenario by name (``binary-A``, ``multiclass-a``, ...) or a JSON path."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.exists():
        return ScenarioSpec.from_dict(json.loads(path.read_text()))
    res = resources.files("noisynp").joinpath("scenarios").joinpath(f"{name_or_path}.json")
    if not res.is_file():
        raise FileNotFoundError(f"no scenario file or shipped scenario named {name_or_path!r}")
    return ScenarioSpec.from_dict(json.loads(res.read_text()))


def shipped_scenarios() -> list:
    root = resources.files("noisynp").joinpath("scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


# --------------------------------------------------------------------------
# Sampling
# --------------------------------------------------------------------------

def _make(spec: ScenarioSpec, X, noisy, true) -> Dataset:
    return Dataset(X, noisy, spec.K, spec.basis_obj(), true_labels=true)


def sample_clean(spec: ScenarioSpec, n: int, rng: np.random.Generator,
                 per_class: bool = False) -> Dataset:
    """Clean sample; the observed labels equal the true labels.

    ``per_class=True`` draws exactly ``n`` points from every class.
    """
    K = spec.K
    if per_class:
        y = np.repeat(np.arange(K), n)
    else:
        if spec.class_probs is None:
            raise ModelValidationError("iid sampling needs class_probs")
        y = rng.choice(K, size=n, p=spec.class_probs)
    X = spec.family.sample(y, rng)
    return _make(spec, X, y, y)


def true_noise_matrices(spec: ScenarioSpec) -> NoiseMatrices:
    """The generating ``(T, M, w, w_tilde)`` of the training design."""
    K = spec.K
    if spec.noise.kind == "transition_eta":
        return complete_noise_matrices(spec.noise.transition(K), spec.class_probs)
    if spec.design == "per_noisy_class":
        w_tilde = np.full(K, 1.0 / K)
    else:
        # iid clean labels with confusion rows: solve w = M' w_tilde for w_tilde
        w_tilde = np.linalg.solve(spec.noise.rows.T, spec.class_probs)
    return noise_from_confusion(spec.noise.rows, w_tilde)


def inject_noise(clean: Dataset, spec: ScenarioSpec, rng: np.random.Generator):
    """Corrupt the labels of ``clean``; returns ``(noisy Dataset, NoiseMatrices)``.

    Each true label ``k`` becomes ``l`` with probability ``T[l, k]``.  Features
    and the basis view are passed through untouched.
    """
    if clean.true_labels is None:
        raise ModelValidationError("inject_noise needs a dataset with true labels")
    nm = true_noise_matrices(spec)
    y = clean.true_labels
    cum = np.cumsum(nm.T, axis=0)
    u = rng.uniform(size=y.shape[0])
    noisy = (u[:, None] >= cum[:, y].T).sum(axis=1)
    noisy = np.minimum(noisy, clean.K - 1)
    return Dataset(clean.features, noisy, clean.K, clean.basis,
                   basis_view=clean.basis_view, true_labels=y), nm


def sample_training(spec: ScenarioSpec, rng: np.random.Generator, n: Optional[int] = None):
    """Noisy training set per the scenario design; returns ``(Dataset, NoiseMatrices)``."""
    n = spec.train_n if n is None else int(n)
    if spec.design == "per_noisy_class":
        # draw the true label of every noisy-class-l point from row l of M
        K = spec.K
        noisy = np.repeat(np.arange(K), n)
        M = spec.noise.rows
        u = rng.uniform(size=noisy.shape[0])
        true = (u[:, None] >= np.cumsum(M, axis=1)[noisy]).sum(axis=1)
        true = np.minimum(true, K - 1)
        X = spec.family.sample(true, rng)
        return _make(spec, X, noisy, true), true_noise_matrices(spec)
    clean = sample_clean(spec, n, rng)
    return inject_noise(clean, spec, rng)


def sample_test(spec: ScenarioSpec, rng: np.random.Generator, n: Optional[int] = None) -> Dataset:
    n = spec.test_n if n is None else int(n)
    return sample_clean(spec, n, rng, per_class=spec.test_design == "per_true_class")


# --------------------------------------------------------------------------
# Oracle tilt parameters
# --------------------------------------------------------------------------

def oracle_drm_params(spec_or_family, basis: Optional[str] = None):
    """Exact ``(gamma, beta, basis_kind)`` of a Gaussian family.

    Shared covariance gives a linear tilt.  Per-class spherical covariances
    ``s_k I`` need a quadratic basis; with ``quadratic-norm`` the last
    coefficient multiplies ``x'x`` and with ``quadratic-diagonal`` it is
    repeated over the squared coordinates.
    """
    if isinstance(spec_or_family, ScenarioSpec):
        fam = spec_or_family.family
        basis = spec_or_family.basis_obj().kind if basis is None else basis
    else:
        fam = spec_or_family
    basis = Basis.from_name(basis or "identity", fam.p).kind
    if fam.kind != "gaussian":
        raise ModelValidationError("oracle tilts exist only for the gaussian family")
    K, p = fam.K, fam.p
    mu = fam.means
    gamma = np.zeros(K)
    if fam.covs is None:
        P = np.linalg.inv(fam.cov)
        lin = np.array([P @ (mu[k] - mu[0]) for k in range(K)])
        for k in range(K):
            gamma[k] = -0.5 * (mu[k] @ P @ mu[k] - mu[0] @ P @ mu[0])
        quad = np.zeros(K)
    else:
        s = []
        for S in fam.covs:
            if not np.allclose(S, S[0, 0] * np.eye(p)):
                raise ModelValidationError("unequal covariances are supported only in spherical form")
            s.append(S[0, 0])
        s = np.array(s)
        lin = mu / s[:, None] - mu[0] / s[0]
        quad = (1.0 / s[0] - 1.0 / s) / 2.0
        gamma = (mu[0] @ mu[0]) / (2 * s[0]) - np.sum(mu * mu, axis=1) / (2 * s) \
            + 0.5 * p * np.log(s[0] / s)
        if basis == "identity" and np.any(quad != 0):
            raise ModelValidationError("unequal covariances need a quadratic basis")
    if basis == "identity":
        beta = lin
    elif basis == "quadratic-norm":
        beta = np.hstack([lin, quad[:, None]])
    elif basis == "quadratic-diagonal":
        beta = np.hstack([lin, np.repeat(quad[:, None], p, axis=1)])
    else:
        raise ModelValidationError(f"no oracle for basis {basis!r}")
    gamma[0] = 0.0
    beta[0] = 0.0
    return gamma, beta, basis


def oracle_posterior_coeffs(spec: ScenarioSpec) -> np.ndarray:
    """Stacked ``(gamma-dagger_k, beta_k)`` for k >= 1 under the clean class probabilities."""
    gamma, beta, _ = oracle_drm_params(spec)
    w = spec.class_probs
    gd = gamma + np.log(w) - np.log(w[0])
    return np.hstack([gd[:, None], beta])[1:]
