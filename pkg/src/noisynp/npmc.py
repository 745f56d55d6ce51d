"""Neyman-Pearson multiclass classification through the Lagrangian dual.

For multipliers ``lambda`` on the constrained classes ``S`` the plug-in rule
is ``argmax_k c_k pi_k(x)`` with ``c_k = (rho_k + lambda_k 1{k in S}) / w_k``.
The empirical dual objective

    G(lambda) = -mean_i max_k c_k pi_k(X_i) + sum_k rho_k + sum_{k in S} lambda_k (1 - alpha_k)

is a minimum of affine functions of ``lambda`` and hence concave; it is
maximized over the box ``[0, box_hi]^|S|`` by a multi-start Hooke-Jeeves
pattern search.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .em import EmConfig, EmTrace, em_fit
from .model import Basis, Dataset, ModelParams, ModelValidationError, NpmcSpec, posterior

FEASIBLE = "feasible"
SUSPECT_INFEASIBLE = "suspect_infeasible"


@dataclass(frozen=True)
class HjConfig:
    box_hi: float = 200.0
    init_step: Optional[float] = None  # defaults to box_hi / 10
    shrink: float = 0.5
    tol_step: float = 1e-4
    max_evals: int = 200_000
    n_starts: int = 8
    seed: int = 0
    n_random_dirs: int = 8

    def __post_init__(self):
        if self.box_hi <= 0:
            raise ValueError("box_hi must be positive")
        if not 0.0 < self.shrink < 1.0:
            raise ValueError("shrink must lie in (0, 1)")
        if self.tol_step <= 0 or self.max_evals < 1 or self.n_starts < 1:
            raise ValueError("tol_step, max_evals and n_starts must be positive")

    @property
    def step0(self) -> float:
        return self.box_hi / 10.0 if self.init_step is None else float(self.init_step)

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class DualState:
    lambda_: np.ndarray
    g_value: float
    box_hi: float = 200.0
    truncated: bool = False
    evaluations: int = 0

    def __post_init__(self):
        lam = np.array(np.ravel(self.lambda_), dtype=float)
        if np.any(lam < 0) or np.any(lam > self.box_hi):
            raise ModelValidationError("multipliers outside the box")
        lam.setflags(write=False)
        object.__setattr__(self, "lambda_", lam)


def coefficient(spec: NpmcSpec, lam, w, k: int) -> float:
    """``(rho_k + lambda_k 1{k in S}) / w_k``; ``lam`` is indexed like ``spec.S``."""
    if w[k] <= 0:
        raise ValueError(f"class {k} has zero proportion")
    extra = 0.0
    if k in spec.S:
        extra = float(np.ravel(lam)[spec.S.index(k)])
    return (float(spec.rho[k]) + extra) / float(w[k])


def coefficients(spec: NpmcSpec, lam, w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise ValueError("class proportions must be positive")
    num = np.array(spec.rho, dtype=float)
    if spec.S:
        num[list(spec.S)] += np.ravel(lam)
    return num / w


class DualObjective:
    """Callable ``lambda -> G(lambda)`` with the posterior matrix cached."""

    def __init__(self, spec: NpmcSpec, params: ModelParams, data: Dataset):
        if spec.K != params.K:
            raise ModelValidationError(f"spec has K={spec.K}, model has K={params.K}")
        self.spec = spec
        self.w = np.asarray(params.w, dtype=float)
        self.scaled = posterior(params, data.basis_view) / self.w[None, :]
        self.S = list(spec.S)
        self.slack = 1.0 - spec.alpha_vector()
        self.rho_sum = float(np.sum(spec.rho))

    def __call__(self, lam) -> float:
        lam = np.ravel(np.asarray(lam, dtype=float))
        num = np.array(self.spec.rho, dtype=float)
        if self.S:
            num[self.S] += lam
        best = np.max(self.scaled * num[None, :], axis=1)
        return float(-best.mean() + self.rho_sum + np.dot(lam, self.slack))


def dual_objective(spec: NpmcSpec, params: ModelParams, data: Dataset, lam) -> float:
    return DualObjective(spec, params, data)(lam)


def _explore(f, x, fx, step, lo, hi, counter, extra=()):
    """Coordinate probes; if none helps, probe the ``extra`` directions."""
    x = x.copy()
    moved = False
    for i in range(x.shape[0]):
        for sgn in (1.0, -1.0):
            trial = x.copy()
            trial[i] = min(max(x[i] + sgn * step, lo), hi)
            if trial[i] == x[i]:
                continue
            ft = f(trial)
            counter[0] += 1
            if ft > fx:
                x, fx, moved = trial, ft, True
                break
    if moved:
        return x, fx
    for d in extra:
        trial = np.clip(x + step * d, lo, hi)
        if np.array_equal(trial, x):
            continue
        ft = f(trial)
        counter[0] += 1
        if ft > fx:
            return trial, ft
    return x, fx


def _extra_directions(m: int, rng: np.random.Generator, n_random: int):
    # ridges of a max-of-affine objective are rarely axis aligned, so the
    # coordinate set is backed by diagonals and a fresh batch of random unit
    # directions at every step size
    dirs = []
    for i in range(m):
        for j in range(i + 1, m):
            for si in (1.0, -1.0):
                for sj in (1.0, -1.0):
                    d = np.zeros(m)
                    d[i], d[j] = si, sj
                    dirs.append(d)
    for _ in range(n_random):
        d = rng.normal(size=m)
        d /= np.max(np.abs(d))
        dirs.extend([d, -d])
    return dirs


def _pattern_search(f, x0, cfg: HjConfig, counter, budget, rng):
    lo, hi = 0.0, cfg.box_hi
    m = np.size(x0)
    base = np.clip(np.asarray(x0, dtype=float), lo, hi)
    fb = f(base)
    counter[0] += 1
    while True:
        step = cfg.step0
        while step >= cfg.tol_step and counter[0] < budget:
            extra = _extra_directions(m, rng, cfg.n_random_dirs)
            x, fx = _explore(f, base, fb, step, lo, hi, counter, extra)
            if fx > fb:
                # keep moving along the successful direction while it pays
                while counter[0] < budget:
                    prev, base, fb = base, x, fx
                    xp = np.clip(2.0 * base - prev, lo, hi)
                    fp = f(xp)
                    counter[0] += 1
                    x, fx = _explore(f, xp, fp, step, lo, hi, counter)
                    if not fx > fb:
                        break
            else:
                step *= cfg.shrink
        # certify at the resolution limit that no tol_step probe improves;
        # if one does, search again from there
        if counter[0] >= budget:
            return base, fb
        x, fx = _explore(f, base, fb, cfg.tol_step, lo, hi, counter)
        if not fx > fb:
            return base, fb
        base, fb = x, fx


def _starts(m: int, cfg: HjConfig):
    hi = cfg.box_hi
    pts = [np.zeros(m), np.full(m, hi)]
    for i in range(m):
        c = np.zeros(m)
        c[i] = hi
        pts.append(c)
    pts = pts[: cfg.n_starts]
    rng = np.random.default_rng(cfg.seed)
    while len(pts) < cfg.n_starts:
        pts.append(rng.uniform(0.0, hi, size=m))
    return pts


def hooke_jeeves_max(f: Callable, dim: int, config: HjConfig = HjConfig()) -> DualState:
    """Maximize ``f`` over ``[0, box_hi]^dim`` by multi-start pattern search.

    Starts are the origin, the far corner, the coordinate corners, then
    seeded uniform draws, truncated to ``n_starts``.  The best result is
    returned; ``truncated`` is set when the evaluation budget ran out.
    """
    if dim < 1:
        raise ValueError("pattern search needs at least one coordinate")
    counter = [0]
    rng = np.random.default_rng([config.seed, 1])
    best_x, best_f = None, -np.inf
    for x0 in _starts(dim, config):
        x, fx = _pattern_search(f, x0, config, counter, config.max_evals, rng)
        if best_x is None or fx > best_f:
            best_x, best_f = x, fx
        if counter[0] >= config.max_evals:
            break
    return DualState(best_x, float(best_f), config.box_hi,
                     truncated=counter[0] >= config.max_evals, evaluations=counter[0])


@dataclass(frozen=True)
class NpmcClassifier:
    lambda_hat: DualState
    spec: NpmcSpec
    params: ModelParams
    feasibility: str
    basis: Optional[Basis] = None
    trace: Optional[EmTrace] = None

    @property
    def coefficients(self) -> np.ndarray:
        return coefficients(self.spec, self.lambda_hat.lambda_, self.params.w)

    def to_dict(self) -> dict:
        return {"lambda_hat": self.lambda_hat.lambda_.tolist(),
                "S": list(self.spec.S),
                "dual_value": self.lambda_hat.g_value,
                "rho_sum": float(np.sum(self.spec.rho)),
                "feasibility": self.feasibility,
                "truncated": self.lambda_hat.truncated,
                "spec": self.spec.to_dict()}


def classify_npmc(clf: NpmcClassifier, gx):
    """``argmax_k c_k pi_k(x)``, ties to the smallest index."""
    single = np.ndim(gx) == 1
    scores = posterior(clf.params, np.atleast_2d(gx)) * clf.coefficients[None, :]
    out = np.argmax(scores, axis=1)
    return int(out[0]) if single else out


def npmc_from_params(params: ModelParams, data: Dataset, spec: NpmcSpec,
                     hj_config: HjConfig = HjConfig(), feas_margin: float = 1e-6,
                     trace: Optional[EmTrace] = None) -> NpmcClassifier:
    """Solve the dual on ``data`` for an already fitted posterior model."""
    G = DualObjective(spec, params, data)
    if spec.S:
        state = hooke_jeeves_max(G, len(spec.S), hj_config)
    else:
        state = DualState(np.zeros(0), G(np.zeros(0)), hj_config.box_hi)
    rho_sum = float(np.sum(spec.rho))
    feas = SUSPECT_INFEASIBLE if spec.S and state.g_value >= rho_sum - feas_margin else FEASIBLE
    return NpmcClassifier(state, spec, params, feas, basis=data.basis, trace=trace)


def fit_npmc(data: Dataset, spec: NpmcSpec, em_config: EmConfig = EmConfig(),
             hj_config: HjConfig = HjConfig(), feas_margin: float = 1e-6) -> NpmcClassifier:
    """EM fit on noisy labels, then the dual maximization on the same sample."""
    if spec.K != data.K:
        raise ModelValidationError(f"spec has K={spec.K}, data has K={data.K}")
    params, _, trace = em_fit(data, config=em_config)
    return npmc_from_params(params, data, spec, hj_config, feas_margin, trace)
