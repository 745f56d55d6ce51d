"""CSV datasets: header ``f0..f{p-1},y`` plus an optional ``y_true`` column."""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .model import Dataset, ModelValidationError, make_dataset


class DataFormatError(ModelValidationError):
    """The CSV violates the dataset schema; the message names the line."""


def _parse_header(header, path):
    if not header:
        raise DataFormatError(f"{path}:1: empty file or missing header")
    names = [h.strip() for h in header]
    if "y" not in names:
        raise DataFormatError(f"{path}:1: no label column 'y' in header")
    feats = [h for h in names if h.startswith("f")]
    expected = [f"f{j}" for j in range(len(feats))]
    if feats != expected:
        raise DataFormatError(f"{path}:1: feature columns must be named f0..f{len(feats) - 1} in order")
    if not feats:
        raise DataFormatError(f"{path}:1: no feature columns")
    extra = set(names) - set(feats) - {"y", "y_true"}
    if extra:
        raise DataFormatError(f"{path}:1: unexpected columns {sorted(extra)}")
    return names, [names.index(f) for f in feats]


def read_dataset_csv(path, K: Optional[int] = None, basis="identity",
                     standardize: Optional[tuple] = None) -> Dataset:
    """Load a dataset, rejecting missing or malformed values with their line.

    ``standardize`` is an optional ``(mean, scale)`` pair applied to the raw
    features before the basis expansion.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            header = None
        names, fcols = _parse_header(header, path)
        ycol = names.index("y")
        tcol = names.index("y_true") if "y_true" in names else None
        X, y, yt = [], [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(names):
                raise DataFormatError(f"{path}:{line}: expected {len(names)} fields, got {len(row)}")
            vals = []
            for j in fcols:
                cell = row[j].strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(f"{path}:{line}: feature {names[j]} value {cell!r} is not a number") from None
                if not math.isfinite(v):
                    raise DataFormatError(f"{path}:{line}: feature {names[j]} is missing or not finite")
                vals.append(v)
            X.append(vals)
            for col, sink, label in ((ycol, y, "y"), (tcol, yt, "y_true")):
                if col is None:
                    continue
                cell = row[col].strip()
                try:
                    lab = int(cell)
                except ValueError:
                    raise DataFormatError(f"{path}:{line}: label {label}={cell!r} is not an integer") from None
                if lab < 0 or (K is not None and lab >= K):
                    bound = f"[0, {K})" if K is not None else "nonnegative"
                    raise DataFormatError(f"{path}:{line}: label {label}={lab} outside {bound}")
                sink.append(lab)
    if not X:
        raise DataFormatError(f"{path}: no data rows")
    X = np.asarray(X, dtype=float)
    if standardize is not None:
        mean, scale = standardize
        X = (X - np.asarray(mean)) / np.asarray(scale)
    return make_dataset(X, np.asarray(y), K=K, basis=basis,
                        true_labels=np.asarray(yt) if tcol is not None else None)


def standardization(X) -> tuple:
    """Column means and standard deviations (unit scale for constant columns)."""
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return X.mean(axis=0), sd


def write_dataset_csv(path, data: Dataset, include_true: bool = True) -> None:
    X = data.features
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = [f"f{j}" for j in range(X.shape[1])] + ["y"]
        with_true = include_true and data.true_labels is not None
        if with_true:
            header.append("y_true")
        w.writerow(header)
        for i in range(X.shape[0]):
            row = [repr(float(v)) for v in X[i]] + [int(data.noisy_labels[i])]
            if with_true:
                row.append(int(data.true_labels[i]))
            w.writerow(row)

