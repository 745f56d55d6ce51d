"""``noisynp`` command-line interface.

Exit codes: 0 success, 1 input error, 2 EM non-convergence (outputs are
still written when a fit exists), 3 fewer than 90% of simulation
repetitions succeeded.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .binary import BinaryNpClassifier, classify_binary, np_binary_from_params
from .datagen import load_scenario, sample_test, sample_training, stream
from .em import EmConfig, EmFitError, em_fit
from .evalkit import METHODS, run_experiment
from .io import DataFormatError, read_dataset_csv, standardization, write_dataset_csv
from .model import (
    MODEL_VERSION,
    Basis,
    ModelValidationError,
    NpmcSpec,
    complete_noise_matrices,
    model_from_json,
    model_to_json,
    posterior,
)
from .npmc import DualState, HjConfig, NpmcClassifier, classify_npmc, npmc_from_params
from .umbrella import UmbrellaConfig, fit_umbrella
from .wml import WmlConvergenceError, softmax_rows

logger = logging.getLogger("noisynp")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_PARTIAL = 0, 1, 2, 3
BASIS_CHOICES = ("identity", "quad", "quad-norm")


class InputError(Exception):
    """Bad flags or inputs; mapped to exit code 1."""


# --------------------------------------------------------------------------
# Flag parsing helpers
# --------------------------------------------------------------------------

def _floats(text: str, what: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def parse_t_update(text: str):
    """``plain`` | ``constrained=x0,x1,..`` | ``penalized=e0,e1,..`` -> (mode, values)."""
    if text == "plain":
        return "plain", None
    mode, sep, values = text.partition("=")
    if mode not in ("constrained", "penalized") or not sep:
        raise InputError(f"--t-update must be plain, constrained=csv or penalized=csv; got {text!r}")
    return mode, _floats(values, "--t-update")


def parse_corruption(text: str):
    if text == "estimated":
        return "estimated"
    mode, sep, values = text.partition("=")
    vals = _floats(values, "--corruption") if sep else ()
    if mode != "known" or len(vals) != 2:
        raise InputError(f"--corruption must be estimated or known=m0,m1; got {text!r}")
    return vals


def _add_em_flags(p):
    p.add_argument("--k", type=int, default=None, help="number of classes (default: inferred)")
    p.add_argument("--basis", choices=BASIS_CHOICES, default="identity")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--t-update", default="plain",
                   help="plain | constrained=xi0,xi1,... | penalized=eta0,eta1,...")
    p.add_argument("--ridge", type=float, default=0.0)
    p.add_argument("--standardize", action="store_true",
                   help="center and scale features before the basis expansion")


def _add_hj_flags(p):
    p.add_argument("--box-hi", type=float, default=200.0)
    p.add_argument("--tol-step", type=float, default=1e-4)
    p.add_argument("--max-evals", type=int, default=200000)
    p.add_argument("--n-starts", type=int, default=8)
    p.add_argument("--feas-margin", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisynp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--seed", type=int, default=None, help="root random seed")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for simulate")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--deterministic", action="store_true",
                        help="omit the timestamp line from result CSVs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the noisy-label model by EM")
    p.add_argument("--data", required=True)
    _add_em_flags(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--trace", default=None, help="trace CSV (default: <out stem>.trace.csv)")

    p = sub.add_parser("np-binary", help="binary Neyman-Pearson classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, required=True)
    _add_em_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("npmc", help="multiclass Neyman-Pearson classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--spec", required=True, help="JSON with rho, alpha, S")
    _add_em_flags(p)
    _add_hj_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("umbrella", help="noise-adjusted umbrella classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--corruption", default="estimated", help="estimated | known=m0,m1")
    _add_em_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("predict", help="apply a model or classifier JSON to a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="Monte Carlo experiment on a scenario")
    p.add_argument("--scenario", required=True, help="shipped scenario name or JSON path")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--methods", default="ours,vanilla,oracle")
    p.add_argument("--alpha", type=float, default=None, help="override the binary target")
    p.add_argument("--spec", default=None, help="override the multiclass spec (JSON)")
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="sample a scenario to CSV")
    p.add_argument("--scenario", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--test", action="store_true", help="draw the clean evaluation set")
    p.add_argument("--dump-scenario", default=None, help="also write the scenario JSON here")
    p.add_argument("--out", required=True)
    return parser


# --------------------------------------------------------------------------
# Shared plumbing
# --------------------------------------------------------------------------

def _em_config(args, seed: int) -> EmConfig:
    mode, values = parse_t_update(args.t_update)
    try:
        return EmConfig(epsilon=args.epsilon, max_iter=args.max_iter, n_restarts=args.restarts,
                        seed=seed, t_update=mode, t_param=values, ridge=args.ridge)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _basis_name(name: str) -> str:
    return {"quad": "quadratic-diagonal", "quad-norm": "quadratic-norm"}.get(name, name)


def _load_data(args):
    """Read the CSV (twice if standardizing) and return ``(data, standardize_doc)``."""
    basis = _basis_name(getattr(args, "basis", "identity"))
    data = read_dataset_csv(args.data, K=args.k, basis="identity")
    if not getattr(args, "standardize", False):
        if basis != "identity":
            data = read_dataset_csv(args.data, K=args.k, basis=basis)
        return data, None
    mean, scale = standardization(data.features)
    data = read_dataset_csv(args.data, K=args.k, basis=basis, standardize=(mean, scale))
    return data, {"mean": mean.tolist(), "scale": scale.tolist()}


def _em_block(trace) -> dict:
    return {"converged": bool(trace.converged), "iterations": int(trace.iterations),
            "restart_index_of_best": int(trace.restart_index_of_best),
            "final_objective": float(trace.profile_logel_per_iter[-1])}


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _stamp(args) -> str:
    if args.deterministic:
        return ""
    return f"# generated {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n"


def _prepend(path, text: str) -> None:
    if text:
        p = Path(path)
        p.write_text(text + p.read_text())


def _fit_em(data, cfg: EmConfig):
    try:
        return em_fit(data, config=cfg)
    except EmFitError as exc:
        raise _NoFit(str(exc)) from None


class _NoFit(Exception):
    pass


def _classifier_doc(kind, params, basis, standardize, cfg, trace, body) -> dict:
    doc = {"version": MODEL_VERSION, "type": kind, "basis": basis.to_dict(),
           "classifier": body, "standardize": standardize}
    if params is not None:
        doc["model"] = model_to_json(params, basis)
    if cfg is not None:
        doc["em_config"] = cfg.to_dict()
    if trace is not None:
        doc["em"] = _em_block(trace)
    return doc


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_fit(args, seed) -> int:
    data, std = _load_data(args)
    cfg = _em_config(args, seed)
    params, _, trace = _fit_em(data, cfg)
    nm = complete_noise_matrices(params.T, params.w)
    extra = {"standardize": std, "em": _em_block(trace), "em_config": cfg.to_dict(),
             "noise": {"M": nm.M.tolist(), "w_tilde": nm.w_tilde.tolist()}}
    if not trace.converged:
        extra["em"]["flag"] = "not_converged"
    _write_json(args.out, model_to_json(params, data.basis, extra))
    trace_path = args.trace or str(Path(args.out).with_suffix("")) + ".trace.csv"
    trace.to_csv(trace_path)
    if not trace.converged:
        logger.error("EM stopped at max_iter=%d before reaching epsilon", cfg.max_iter)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_np_binary(args, seed) -> int:
    data, std = _load_data(args)
    if data.K != 2:
        raise InputError("np-binary needs K=2")
    if not 0.0 < args.alpha < 1.0:
        raise InputError("--alpha must lie in (0, 1)")
    cfg = _em_config(args, seed)
    params, _, trace = _fit_em(data, cfg)
    clf = np_binary_from_params(params, data, args.alpha, trace)
    _write_json(args.out, _classifier_doc("np-binary", params, data.basis, std, cfg, trace,
                                          clf.to_dict()))
    return EXIT_OK if trace.converged else EXIT_NONCONVERGED


def cmd_npmc(args, seed) -> int:
    data, std = _load_data(args)
    try:
        spec = NpmcSpec.from_json(args.spec)
    except (KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"bad spec file {args.spec}: {exc}") from None
    if spec.K != data.K:
        raise InputError(f"spec has K={spec.K}, data has K={data.K}")
    cfg = _em_config(args, seed)
    hj = HjConfig(box_hi=args.box_hi, tol_step=args.tol_step, max_evals=args.max_evals,
                  n_starts=args.n_starts, seed=seed)
    params, _, trace = _fit_em(data, cfg)
    clf = npmc_from_params(params, data, spec, hj, args.feas_margin, trace)
    body = clf.to_dict()
    body["suspect_infeasible"] = clf.feasibility != "feasible"
    body["coefficients"] = clf.coefficients.tolist()
    _write_json(args.out, _classifier_doc("npmc", params, data.basis, std, cfg, trace, body))
    return EXIT_OK if trace.converged else EXIT_NONCONVERGED


def cmd_umbrella(args, seed) -> int:
    data, std = _load_data(args)
    if data.K != 2:
        raise InputError("umbrella needs K=2")
    corruption = parse_corruption(args.corruption)
    cfg = _em_config(args, seed)
    try:
        ucfg = UmbrellaConfig(alpha=args.alpha, delta=args.delta, corruption=corruption,
                              seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    try:
        clf = fit_umbrella(data, ucfg, cfg)
    except EmFitError as exc:
        raise _NoFit(str(exc)) from None
    body = clf.to_dict()
    body["config"] = ucfg.to_dict()
    _write_json(args.out, _classifier_doc("umbrella", None, data.basis, std, cfg, None, body))
    return EXIT_OK


def _load_predictor(path):
    """Return ``(predict_fn, basis, standardize)``; ``predict_fn(G) -> (labels, probs)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read model {path}: {exc}") from None
    kind = doc.get("type", "model")
    std = doc.get("standardize")
    body = doc.get("classifier", {})
    if kind == "umbrella":
        coeffs = np.asarray(body["score_coeffs"])
        thr = float(body["threshold"])

        def predict_umb(G):
            logits = coeffs[:, 0][None, :] + G @ coeffs[:, 1:].T
            probs = softmax_rows(logits)
            return (logits[:, 1] - logits[:, 0] > thr).astype(np.int64), probs

        b = doc["basis"]
        return predict_umb, Basis(kind=b["kind"], p=int(b["p"])), std
    params, basis, _ = model_from_json(doc["model"] if kind != "model" else doc)
    if kind == "model":
        def predict_model(G):
            probs = posterior(params, G)
            return np.argmax(probs, axis=1), probs
        return predict_model, basis, std
    if kind == "np-binary":
        lam = body["lambda_hat"]
        clf = BinaryNpClassifier(lambda_hat=np.inf if lam == "inf" else float(lam),
                                 w_hat=float(body["w_hat"]), posterior_params=params,
                                 alpha=float(body["alpha"]), basis=basis)

        def predict_bin(G):
            return classify_binary(clf, G), posterior(params, G)
        return predict_bin, basis, std
    if kind == "npmc":
        spec = NpmcSpec.from_dict(body["spec"])
        state = DualState(np.asarray(body["lambda_hat"], dtype=float),
                          float(body["dual_value"]), box_hi=np.inf)
        clf = NpmcClassifier(lambda_hat=state, spec=spec, params=params,
                             feasibility=body["feasibility"], basis=basis)

        def predict_mc(G):
            return classify_npmc(clf, G), posterior(params, G)
        return predict_mc, basis, std
    raise InputError(f"unknown model type {kind!r}")


def cmd_predict(args, seed) -> int:
    predict, basis, std = _load_predictor(args.model)
    raw = read_dataset_csv(args.data, K=None, basis="identity")
    X = raw.features
    if X.shape[1] != basis.p:
        raise InputError(f"model expects {basis.p} features, data has {X.shape[1]}")
    if std is not None:
        X = (X - np.asarray(std["mean"])) / np.asarray(std["scale"])
    G = basis.transform(X)
    labels, probs = predict(G)
    with open(args.out, "w", newline="") as fh:
        fh.write(_stamp(args))
        w = csv.writer(fh)
        w.writerow(["pred"] + [f"p{k}" for k in range(probs.shape[1])])
        for lab, row in zip(labels, probs):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])
    return EXIT_OK


def cmd_simulate(args, seed) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    unknown = [m for m in methods if m not in METHODS]
    if unknown or not methods:
        raise InputError(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    try:
        scenario = load_scenario(args.scenario)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    spec = NpmcSpec.from_json(args.spec) if args.spec else None
    em_cfg = EmConfig(n_restarts=args.restarts)
    try:
        result = run_experiment(scenario, methods, R=args.reps, n=args.n, alpha=args.alpha,
                                spec=spec, seed=seed, em_config=em_cfg, threads=args.threads)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(args)
    for name, writer in (("long.csv", result.write_long_csv),
                         ("summary.csv", result.write_summary_csv),
                         ("failures.csv", result.write_failures_csv)):
        writer(out / name)
        _prepend(out / name, stamp)
    frac = result.success_fraction()
    if frac < 0.9:
        logger.error("only %.1f%% of method-repetitions succeeded", 100 * frac)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_generate(args, seed) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from None
    root = scenario.seed if seed is None else seed
    if args.test:
        data = sample_test(scenario, stream(root, args.rep, "test"), args.n)
    else:
        data, _ = sample_training(scenario, stream(root, args.rep, "train"), args.n)
    write_dataset_csv(args.out, data, include_true=True)
    if args.dump_scenario:
        _write_json(args.dump_scenario, scenario.to_dict())
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "np-binary": cmd_np_binary, "npmc": cmd_npmc,
            "umbrella": cmd_umbrella, "predict": cmd_predict, "simulate": cmd_simulate,
            "generate": cmd_generate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; the contract reserves 2 for non-convergence
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    resolved = {k: v for k, v in vars(args).items()}
    if args.seed is None and args.command != "generate" and args.command != "simulate":
        resolved["seed"] = 0
    print(json.dumps({"noisynp": __version__, "config": resolved}, sort_keys=True),
          file=sys.stderr)
    seed = resolved["seed"]
    try:
        return COMMANDS[args.command](args, seed)
    except (InputError, DataFormatError, ModelValidationError, FileNotFoundError,
            KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (_NoFit, WmlConvergenceError) as exc:
        print(f"error: fit did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
