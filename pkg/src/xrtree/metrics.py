"""Ranking metrics: precision@k, recall@k and propensity-scored precision.

Predictions come as a sparse score matrix whose per-row ranking is by
descending value with ties to the smaller column index (the same order the
prediction writer uses). Rows with fewer than k stored entries are padded
with misses. Propensities follow the inverse-sigmoid frequency model with
dataset parameters A and B.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sparse


@dataclass
class PropensityModel:
    a: float
    b: float
    propensities: np.ndarray  # per label, in (0, 1]


def ranked_rows(pred: sparse.SparseMatrix, k):
    """Top-k column ids per row by descending score, ties to smaller index."""
    pred = sparse.canonicalize(pred)
    topk = sparse.top_k_per_row(pred, k)
    out = []
    for r in range(topk.shape[0]):
        lo, hi = topk.indptr[r], topk.indptr[r + 1]
        cols = topk.indices[lo:hi]
        vals = topk.data[lo:hi]
        order = np.argsort(-vals, kind="stable")
        out.append(cols[order])
    return out


def precision_at_k(pred, y_true, k) -> float:
    """Mean over instances of |top-k hits| / k."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    y = sparse.binarize(y_true)
    total = 0.0
    rows = ranked_rows(pred, k)
    for r, cols in enumerate(rows):
        truth = set(y.indices[y.indptr[r]:y.indptr[r + 1]].tolist())
        total += sum(1 for c in cols[:k] if int(c) in truth) / k
    return total / max(1, len(rows))


def recall_at_k(pred, y_true, k) -> float:
    """Mean over labeled instances of |top-k hits| / |positives|."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    y = sparse.binarize(y_true)
    total = 0.0
    counted = 0
    rows = ranked_rows(pred, k)
    for r, cols in enumerate(rows):
        truth = set(y.indices[y.indptr[r]:y.indptr[r + 1]].tolist())
        if not truth:
            continue
        counted += 1
        total += sum(1 for c in cols[:k] if int(c) in truth) / len(truth)
    return total / counted if counted else 0.0


def psp_at_k(pred, y_true, propensity: PropensityModel, k) -> float:
    """Propensity-weighted precision: hits count 1/p_label."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    p = np.asarray(propensity.propensities, dtype=np.float64)
    if np.any(p <= 0):
        raise ValueError("propensities must be positive")
    y = sparse.binarize(y_true)
    total = 0.0
    rows = ranked_rows(pred, k)
    for r, cols in enumerate(rows):
        truth = set(y.indices[y.indptr[r]:y.indptr[r + 1]].tolist())
        total += sum(1.0 / p[int(c)] for c in cols[:k] if int(c) in truth) / k
    return total / max(1, len(rows))


def fit_propensity(train_label_counts, n_train, a=0.55, b=1.5) -> PropensityModel:
    """Inverse propensities from training-set label frequencies.

    p_l = 1 / (1 + C * exp(-a * ln(n_l + b))) with C = (ln N - 1)(b + 1)^a.
    """
    if n_train <= 1:
        raise ValueError(f"need more than one training instance, got {n_train}")
    counts = np.asarray(train_label_counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("label counts must be non-negative")
    c = (np.log(n_train) - 1.0) * (b + 1.0) ** a
    p = 1.0 / (1.0 + c * np.exp(-a * np.log(counts + b)))
    return PropensityModel(a=a, b=b, propensities=p)
