"""Metrics and the Monte Carlo experiment harness.

A repetition draws one noisy training set and one clean test set from the
scenario, fits every requested method on the same data and records per-class
errors.  Binary tasks report ``type1``/``type2`` (and ``violation`` =
``type1 > alpha``); multiclass tasks report ``excess_k = R_k - alpha_k`` on
the constrained classes and the weighted objective ``sum_k rho_k R_k``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .binary import classify_binary, np_binary_from_params
from .datagen import (
    ScenarioSpec,
    derived_seed,
    oracle_posterior_coeffs,
    sample_test,
    sample_training,
    stream,
)
from .em import EmConfig, EmFitError, em_fit, fit_identity_noise
from .model import (
    Dataset,
    ModelParams,
    ModelValidationError,
    NpmcSpec,
    complete_noise_matrices,
    posterior,
    posterior_intercepts,
)
from .npmc import HjConfig, classify_npmc, npmc_from_params
from .umbrella import UmbrellaConfig, fit_umbrella
from .wml import WmlConvergenceError

logger = logging.getLogger(__name__)

METHODS = ("ours", "vanilla", "oracle", "npc", "npc_star", "npc_plus", "naive")
BINARY_ONLY = ("npc", "npc_star", "npc_plus")


def class_errors(predictions, test: Dataset) -> np.ndarray:
    """``R_k`` = share of true class ``k`` that is misclassified.

    ``predictions`` is a label vector or a callable mapping basis rows to labels.
    """
    if test.true_labels is None:
        raise ModelValidationError("test set needs true labels")
    pred = predictions(test.basis_view) if callable(predictions) else predictions
    pred = np.asarray(pred)
    y = test.true_labels
    out = np.empty(test.K)
    for k in range(test.K):
        mask = y == k
        if not mask.any():
            raise ModelValidationError(f"test set has no samples of class {k}")
        out[k] = np.mean(pred[mask] != k)
    return out


def coefficient_mse(params: ModelParams, truth: np.ndarray) -> float:
    """Mean squared error of ``(gamma-dagger_k, beta_k)``, k >= 1."""
    est = np.hstack([posterior_intercepts(params)[:, None], params.beta])[1:]
    return float(np.mean((est - truth) ** 2))


@dataclass(frozen=True)
class RepetitionResult:
    method: str
    rep: int
    seed: int
    per_class_error: tuple
    objective: Optional[float] = None
    type1: Optional[float] = None
    type2: Optional[float] = None
    extra: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        out = {f"R{k}": float(v) for k, v in enumerate(self.per_class_error)}
        if self.type1 is not None:
            out["type1"] = float(self.type1)
            out["type2"] = float(self.type2)
        if self.objective is not None:
            out["objective"] = float(self.objective)
        out.update({k: float(v) for k, v in self.extra.items()})
        return out


@dataclass(frozen=True)
class Failure:
    method: str
    rep: int
    error: str


@dataclass
class ExperimentResult:
    rows: list
    failures: list
    methods: tuple
    n_reps: int

    def long_rows(self):
        for r in self.rows:
            for metric, value in r.metrics().items():
                yield r.method, r.rep, metric, value

    def summary(self) -> dict:
        """``{method: {metric: (mean, sd, count)}}`` with sample sd (ddof=1)."""
        acc = {}
        for method, _, metric, value in self.long_rows():
            acc.setdefault(method, {}).setdefault(metric, []).append(value)
        out = {}
        for method, metrics in acc.items():
            out[method] = {}
            for metric, vals in metrics.items():
                v = np.asarray(vals)
                sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
                out[method][metric] = (float(np.mean(v)), sd, int(v.size))
        return out

    def mean(self, method: str, metric: str) -> float:
        return self.summary()[method][metric][0]

    def success_fraction(self) -> float:
        total = len(self.methods) * self.n_reps
        return 1.0 - len(self.failures) / total if total else 1.0

    def write_long_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "rep", "metric", "value"])
            for method, rep, metric, value in self.long_rows():
                w.writerow([method, rep, metric, repr(value)])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "metric", "mean", "sd", "n_ok", "n_failed"])
            failed = {}
            for f in self.failures:
                failed[f.method] = failed.get(f.method, 0) + 1
            for method, metrics in self.summary().items():
                for metric, (mean, sd, count) in metrics.items():
                    w.writerow([method, metric, repr(mean), repr(sd), count,
                                failed.get(method, 0)])

    def write_failures_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "rep", "error"])
            for f in self.failures:
                w.writerow([f.method, f.rep, f.error])


# --------------------------------------------------------------------------
# One repetition
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Task:
    scenario: ScenarioSpec
    methods: tuple
    n: int
    alpha: Optional[float]
    delta: float
    spec: Optional[NpmcSpec]
    em_config: EmConfig
    hj_config: HjConfig
    root_seed: int


def _binary_result(method, rep, seed, errs, alpha, extra=None):
    extra = dict(extra or {})
    extra["violation"] = float(errs[0] > alpha)
    return RepetitionResult(method, rep, seed, tuple(errs), type1=errs[0], type2=errs[1],
                            extra=extra)


def _npmc_result(method, rep, seed, errs, spec: NpmcSpec, extra=None):
    extra = dict(extra or {})
    for k in spec.S:
        extra[f"excess{k}"] = float(errs[k] - spec.alpha[k])
    obj = float(np.dot(spec.rho, errs))
    return RepetitionResult(method, rep, seed, tuple(errs), objective=obj, extra=extra)


def run_repetition(task: _Task, rep: int):
    """Fit and evaluate every method on one draw; returns ``(rows, failures)``."""
    sc = task.scenario
    train, nm = sample_training(sc, stream(task.root_seed, rep, "train"), task.n)
    test = sample_test(sc, stream(task.root_seed, rep, "test"))
    fit_seed = derived_seed(task.root_seed, rep, "fit")
    em_cfg = task.em_config.replace(seed=fit_seed)
    binary = task.spec is None
    truth = None
    if sc.family.kind == "gaussian":
        if sc.class_probs is not None:
            truth = oracle_posterior_coeffs(sc)
        else:
            truth = oracle_posterior_coeffs(sc.replace(class_probs=nm.w))

    cache = {}

    def em_params():
        if "em" not in cache:
            params, _, trace = em_fit(train, config=em_cfg)
            cache["em"] = (params, trace)
        return cache["em"]

    rows, failures = [], []
    for method in task.methods:
        try:
            extra = {}
            if method in ("ours", "vanilla", "oracle", "naive"):
                if method == "ours":
                    params, trace = em_params()
                    extra["em_iterations"] = trace.iterations
                    extra["em_converged"] = float(trace.converged)
                elif method == "oracle":
                    params = fit_identity_noise(train.with_labels(train.true_labels))
                else:
                    params = fit_identity_noise(train)
                if truth is not None and method != "naive":
                    extra["coef_mse"] = coefficient_mse(params, truth)
                if method == "naive":
                    pred = np.argmax(posterior(params, test.basis_view), axis=1)
                elif binary:
                    clf = np_binary_from_params(params, train, task.alpha)
                    pred = classify_binary(clf, test.basis_view)
                else:
                    clf = npmc_from_params(params, train, task.spec, task.hj_config)
                    extra["suspect_infeasible"] = float(clf.feasibility != "feasible")
                    pred = classify_npmc(clf, test.basis_view)
            else:
                if method == "npc":
                    corruption = (1.0, 0.0)
                elif method == "npc_star":
                    corruption = (float(nm.M[0, 0]), float(nm.M[1, 0]))
                else:
                    # plug-in corruption levels from the EM fit shared with "ours"
                    fitted = em_params()[0]
                    M = complete_noise_matrices(fitted.T, fitted.w).M
                    corruption = (float(M[0, 0]), float(M[1, 0]))
                ucfg = UmbrellaConfig(alpha=task.alpha, delta=task.delta,
                                      corruption=corruption,
                                      seed=derived_seed(task.root_seed, rep, "split"))
                clf = fit_umbrella(train, ucfg)
                extra["k_star"] = clf.k_star
                extra["saturated"] = float(clf.saturated)
                pred = clf.predict(test.basis_view)
            errs = class_errors(pred, test)
            if binary:
                rows.append(_binary_result(method, rep, fit_seed, errs, task.alpha, extra))
            else:
                rows.append(_npmc_result(method, rep, fit_seed, errs, task.spec, extra))
        except (EmFitError, WmlConvergenceError, ModelValidationError, ValueError) as exc:
            logger.warning("rep %d method %s failed: %s", rep, method, exc)
            failures.append(Failure(method, rep, f"{type(exc).__name__}: {exc}"))
    return rows, failures


def _run_one(args):
    task, rep = args
    return run_repetition(task, rep)


def run_experiment(scenario: ScenarioSpec, methods: Sequence[str], R: int = 50,
                   n: Optional[int] = None, alpha: Optional[float] = None,
                   spec: Optional[NpmcSpec] = None, seed: Optional[int] = None,
                   delta: Optional[float] = None, em_config: EmConfig = EmConfig(),
                   hj_config: HjConfig = HjConfig(), threads: int = 1,
                   reps: Optional[Iterable[int]] = None) -> ExperimentResult:
    """Run ``R`` repetitions (or the explicit ``reps`` indices) of every method.

    The task comes from the scenario unless ``alpha`` (binary) or ``spec``
    (multiclass) overrides it.  Repetition ``r`` is fully determined by
    ``(seed, r)``, so results do not depend on ``threads`` or ordering.
    """
    methods = tuple(methods)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s) {unknown}; choose from {METHODS}")
    task_doc = scenario.task
    if spec is None and alpha is None:
        if task_doc.get("type") == "npmc":
            spec = NpmcSpec.from_dict(task_doc["spec"])
        else:
            alpha = float(task_doc.get("alpha", 0.05))
    if spec is not None and alpha is not None:
        raise ValueError("give either alpha (binary) or spec (multiclass), not both")
    if spec is None and scenario.K != 2:
        raise ValueError("binary task on a multiclass scenario")
    if spec is not None:
        if spec.K != scenario.K:
            raise ValueError(f"spec has K={spec.K}, scenario has K={scenario.K}")
        bad = [m for m in methods if m in BINARY_ONLY]
        if bad:
            raise ValueError(f"methods {bad} are binary only")
    if delta is None:
        delta = float(task_doc.get("delta", 0.05))
    task = _Task(scenario, methods, scenario.train_n if n is None else int(n), alpha,
                 delta, spec, em_config, hj_config,
                 scenario.seed if seed is None else int(seed))
    rep_list = list(range(R)) if reps is None else [int(r) for r in reps]
    if threads > 1 and len(rep_list) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_one, [(task, r) for r in rep_list]))
    else:
        results = [run_repetition(task, r) for r in rep_list]
    rows, failures = [], []
    for r_rows, r_fail in results:
        rows.extend(r_rows)
        failures.extend(r_fail)
    return ExperimentResult(rows, failures, methods, len(rep_list))
