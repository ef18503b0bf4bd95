"""Dataset ingestion, serialization and synthetic data generation.

Supported inputs:

* combined file, one instance per line: comma-separated 0-based label ids,
  a space, then `idx:val` feature pairs (either part may be empty). An
  optional first line `N d L` (three bare integers) pins the shapes.
* label-free feature file: `idx:val idx:val ...` per line.
* raw text (UTF-8, one document per line) plus a label file of
  comma-separated label ids per line.

Prediction files hold one line per instance: `label:score` pairs sorted by
descending score, ties to the smaller label id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import sparse


@dataclass
class Dataset:
    labels: sparse.SparseMatrix          # N x L binary
    features: sparse.SparseMatrix | None = None
    texts: list | None = None
    split: str = ""

    @property
    def n(self):
        return self.labels.shape[0]

    @property
    def n_labels(self):
        return self.labels.shape[1]


class FormatError(ValueError):
    def __init__(self, path, lineno, message):
        super().__init__(f"{path}:{lineno}: {message}")


def _parse_feature_tokens(tokens, path, lineno):
    cols, vals = [], []
    for tok in tokens:
        idx, sep, val = tok.partition(":")
        if not sep:
            raise FormatError(path, lineno, f"expected idx:val, got {tok!r}")
        try:
            cols.append(int(idx))
            vals.append(float(val))
        except ValueError:
            raise FormatError(path, lineno, f"bad feature pair {tok!r}") from None
        if cols[-1] < 0:
            raise FormatError(path, lineno, f"negative feature index {cols[-1]}")
    return cols, vals


def _parse_label_field(field, path, lineno):
    if not field:
        return []
    out = []
    for tok in field.split(","):
        try:
            out.append(int(tok))
        except ValueError:
            raise FormatError(path, lineno, f"bad label id {tok!r}") from None
        if out[-1] < 0:
            raise FormatError(path, lineno, f"negative label id {out[-1]}")
    return out


def _is_header(line):
    toks = line.split()
    return len(toks) == 3 and all(t.isdigit() for t in toks)


def _build_csr(rows_cols, rows_vals, n_cols):
    indptr = np.zeros(len(rows_cols) + 1, dtype=np.int64)
    for i, cols in enumerate(rows_cols):
        indptr[i + 1] = indptr[i] + len(cols)
    idx = np.concatenate(rows_cols) if rows_cols else np.zeros(0)
    dat = np.concatenate(rows_vals) if rows_vals else np.zeros(0)
    m = sp.csr_matrix(
        (np.asarray(dat, dtype=np.float32), np.asarray(idx, dtype=np.int64),
         indptr),
        shape=(len(rows_cols), n_cols))
    return sparse.canonicalize(m)


def read_combined(path, n_labels=None, n_features=None) -> Dataset:
    """Read the labeled SVMLight-style format (optional `N d L` header)."""
    label_rows, feat_cols, feat_vals = [], [], []
    declared = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if lineno == 1 and _is_header(line):
                n_decl, d_decl, l_decl = (int(t) for t in line.split())
                declared = (n_decl, d_decl, l_decl)
                continue
            if not line.strip():
                label_rows.append([])
                feat_cols.append([])
                feat_vals.append([])
                continue
            head, *rest = line.split(" ")
            if ":" in head:
                rest = [head] + rest
                head = ""
            labels = _parse_label_field(head, path, lineno)
            cols, vals = _parse_feature_tokens(
                [t for t in rest if t], path, lineno)
            label_rows.append(labels)
            feat_cols.append(cols)
            feat_vals.append(vals)
    if declared:
        _, d_decl, l_decl = declared
        n_features = n_features or d_decl
        n_labels = n_labels or l_decl
    max_label = max((max(r) for r in label_rows if r), default=-1)
    max_feat = max((max(c) for c in feat_cols if c), default=-1)
    if n_labels is None:
        n_labels = max_label + 1
    elif max_label >= n_labels:
        raise ValueError(
            f"{path}: label id {max_label} out of range for L={n_labels}")
    if n_features is None:
        n_features = max_feat + 1
    elif max_feat >= n_features:
        raise ValueError(
            f"{path}: feature index {max_feat} out of range for d={n_features}")
    y = _build_csr([r for r in label_rows],
                   [[1.0] * len(r) for r in label_rows], n_labels)
    x = _build_csr(feat_cols, feat_vals, n_features)
    return Dataset(labels=sparse.binarize(y), features=x)


def read_features(path, n_features=None) -> sparse.SparseMatrix:
    """Read the label-free `idx:val ...` format."""
    feat_cols, feat_vals = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if lineno == 1 and _is_header(line):
                n_features = n_features or int(line.split()[1])
                continue
            cols, vals = _parse_feature_tokens(line.split(), path, lineno)
            feat_cols.append(cols)
            feat_vals.append(vals)
    max_feat = max((max(c) for c in feat_cols if c), default=-1)
    if n_features is None:
        n_features = max_feat + 1
    elif max_feat >= n_features:
        raise ValueError(
            f"{path}: feature index {max_feat} out of range for d={n_features}")
    return _build_csr(feat_cols, feat_vals, n_features)


def read_texts(path) -> list:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def read_labels(path, n_labels=None) -> sparse.SparseMatrix:
    """Comma-separated label ids, one line per instance."""
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            rows.append(_parse_label_field(raw.strip(), path, lineno))
    max_label = max((max(r) for r in rows if r), default=-1)
    if n_labels is None:
        n_labels = max_label + 1
    elif max_label >= n_labels:
        raise ValueError(
            f"{path}: label id {max_label} out of range for L={n_labels}")
    return sparse.binarize(
        _build_csr(rows, [[1.0] * len(r) for r in rows], n_labels))


def ingest(combined=None, features=None, labels=None, texts=None,
           n_labels=None) -> Dataset:
    """Assemble a dataset from whichever files were provided."""
    if combined is not None:
        return ingest_validate(read_combined(combined, n_labels=n_labels))
    if texts is not None:
        if labels is None:
            raise ValueError("raw-text input needs a label file")
        docs = read_texts(texts)
        y = read_labels(labels, n_labels=n_labels)
        if len(docs) != y.shape[0]:
            raise ValueError(
                f"{texts} has {len(docs)} documents but {labels} has "
                f"{y.shape[0]} label rows")
        return ingest_validate(Dataset(labels=y, texts=docs))
    if features is not None:
        if labels is None:
            raise ValueError("feature input needs a label file")
        x = read_features(features)
        y = read_labels(labels, n_labels=n_labels)
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"{features} has {x.shape[0]} rows but {labels} has "
                f"{y.shape[0]} label rows")
        return ingest_validate(Dataset(labels=y, features=x))
    raise ValueError("no input files given")


def ingest_validate(ds: Dataset) -> Dataset:
    if ds.features is not None and ds.features.shape[0] != ds.labels.shape[0]:
        raise ValueError(
            f"feature rows {ds.features.shape[0]} != label rows "
            f"{ds.labels.shape[0]}")
    if ds.labels.nnz and not np.all(ds.labels.data == 1.0):
        raise ValueError("label values must be binary")
    return ds


def write_combined(ds: Dataset, path, header=True):
    x = ds.features
    if x is None:
        raise ValueError("dataset has no feature matrix to write")
    y = ds.labels
    with open(path, "w", encoding="utf-8") as f:
        if header:
            f.write(f"{ds.n} {x.shape[1]} {ds.n_labels}\n")
        for r in range(ds.n):
            lab = ",".join(str(c) for c in y.indices[y.indptr[r]:y.indptr[r + 1]])
            fx = " ".join(
                f"{c}:{v:.6g}" for c, v in zip(
                    x.indices[x.indptr[r]:x.indptr[r + 1]],
                    x.data[x.indptr[r]:x.indptr[r + 1]]))
            f.write(f"{lab} {fx}".rstrip() + "\n")


def write_labels(y: sparse.SparseMatrix, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in range(y.shape[0]):
            f.write(",".join(
                str(c) for c in y.indices[y.indptr[r]:y.indptr[r + 1]]) + "\n")


def write_predictions(pred: sparse.SparseMatrix, path, topk):
    """One `label:score` line per instance, best first."""
    topm = sparse.top_k_per_row(pred, topk)
    with open(path, "w", encoding="utf-8") as f:
        for r in range(topm.shape[0]):
            lo, hi = topm.indptr[r], topm.indptr[r + 1]
            cols = topm.indices[lo:hi]
            vals = topm.data[lo:hi]
            order = np.argsort(-vals, kind="stable")
            f.write(" ".join(
                f"{cols[i]}:{vals[i]:.6f}" for i in order) + "\n")


def read_predictions(path, n_labels) -> sparse.SparseMatrix:
    rows_cols, rows_vals = [], []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            cols, vals = _parse_feature_tokens(raw.split(), path, lineno)
            rows_cols.append(cols)
            rows_vals.append(vals)
    return _build_csr(rows_cols, rows_vals, n_labels)


def gen_synthetic(n, n_labels, cluster_size, noise, seed,
                  avg_labels=2.0, clusters_per_instance=1,
                  d_noise=32) -> Dataset:
    """Planted hierarchical dataset.

    Labels partition into contiguous true clusters of `cluster_size`. Each
    instance picks `clusters_per_instance` clusters, draws its positive
    labels from them, and emits one indicator feature per positive label
    plus one per touched cluster and two noise-block features. With
    probability `noise` a label indicator is corrupted to a random other
    label's column, which controls recoverability: at noise zero a flat
    one-vs-all model can recover every label exactly.
    """
    if cluster_size < 1 or n_labels < cluster_size:
        raise ValueError("cluster_size must be in [1, n_labels]")
    rng = np.random.default_rng(seed)
    n_clusters = -(-n_labels // cluster_size)
    d = n_labels + n_clusters + d_noise
    feat_cols, feat_vals, label_rows = [], [], []
    for _ in range(n):
        first = int(rng.integers(n_clusters))
        clusters = [first]
        while len(clusters) < min(clusters_per_instance, n_clusters):
            c = int(rng.integers(n_clusters))
            if c not in clusters:
                clusters.append(c)
        members = np.concatenate([
            np.arange(c * cluster_size, min((c + 1) * cluster_size, n_labels))
            for c in clusters])
        target = 1 + rng.poisson(max(0.0, avg_labels - 1.0))
        chosen = rng.choice(members, size=min(target, len(members)),
                            replace=False)
        cols = {}
        for lbl in chosen:
            col = int(lbl)
            if noise > 0 and rng.random() < noise:
                col = int(rng.integers(n_labels))
            cols[col] = cols.get(col, 0.0) + 1.0
        for c in clusters:
            cols[n_labels + c] = cols.get(n_labels + c, 0.0) + 1.0
        for _ in range(2):
            col = n_labels + n_clusters + int(rng.integers(d_noise))
            cols[col] = cols.get(col, 0.0) + float(rng.uniform(0.2, 0.8))
        ordered = sorted(cols)
        feat_cols.append(ordered)
        feat_vals.append([cols[c] for c in ordered])
        label_rows.append(sorted(int(v) for v in set(chosen.tolist())))
    x = _build_csr(feat_cols, feat_vals, d)
    y = sparse.binarize(_build_csr(
        label_rows, [[1.0] * len(r) for r in label_rows], n_labels))
    return Dataset(labels=y, features=x)
