"""Sparse and dense matrix primitives shared by every other module.

The working sparse type is a canonical float32 CSR matrix (scipy.sparse):
sorted, duplicate-free column indices within each row and no stored zeros.
Every function here returns canonical matrices; `canonicalize` is the
single entry point for untrusted input. Dense matrices are C-order float32
ndarrays.

Products accumulate in float64 and round back to float32 so that reductions
stay stable at 32-bit storage precision.
"""

from __future__ import annotations

import struct

import numpy as np
import scipy.sparse as sp

# Canonical CSR carrier for features, labels, indexers and ranker weights.
SparseMatrix = sp.csr_matrix

XRSM_MAGIC = b"XRSM"
XRSM_VERSION = 1


def canonicalize(m) -> SparseMatrix:
    """Return `m` as a canonical float32 CSR matrix.

    Canonical means: sorted column indices per row, duplicates summed,
    no explicitly stored zeros. Accepts anything scipy can coerce.
    """
    m = sp.csr_matrix(m)
    if m.dtype != np.float32:
        m = m.astype(np.float32)
    m.sum_duplicates()
    m.sort_indices()
    m.eliminate_zeros()
    return m


def validate(m: SparseMatrix) -> None:
    """Check the CSR invariants; raise ValueError on violation."""
    n_rows, n_cols = m.shape
    ptr, idx = m.indptr, m.indices
    if len(ptr) != n_rows + 1 or ptr[0] != 0 or ptr[-1] != m.nnz:
        raise ValueError("row_ptr malformed")
    if np.any(np.diff(ptr) < 0):
        raise ValueError("row_ptr not non-decreasing")
    if m.nnz:
        if idx.min() < 0 or idx.max() >= n_cols:
            raise ValueError("column index out of range")
        for r in range(n_rows):
            cols = idx[ptr[r]:ptr[r + 1]]
            if np.any(np.diff(cols) <= 0):
                raise ValueError(f"columns not strictly increasing in row {r}")
    if np.any(m.data == 0):
        raise ValueError("explicit zeros stored")


def from_dense(a) -> SparseMatrix:
    return canonicalize(sp.csr_matrix(np.asarray(a, dtype=np.float32)))


def as_dense(a) -> np.ndarray:
    """Coerce to a C-order float32 2-D array."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    if a.ndim != 2:
        raise ValueError(f"dense matrix must be 2-D, got ndim={a.ndim}")
    return a


def spmm(a: SparseMatrix, b: SparseMatrix, transpose_b: bool = False) -> SparseMatrix:
    """Exact sparse product a @ b (or a @ b.T), canonicalized.

    Accumulates in float64, rounds the result to float32.
    """
    bt = b.T if transpose_b else b
    if a.shape[1] != bt.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} @ {bt.shape}")
    prod = a.astype(np.float64) @ bt.astype(np.float64)
    return canonicalize(prod)


def binarize(m: SparseMatrix) -> SparseMatrix:
    """Replace every stored nonzero (any sign) by 1.0."""
    m = canonicalize(m)
    out = m.copy()
    out.data = np.ones_like(out.data)
    return out


def top_k_per_row(m: SparseMatrix, k: int) -> SparseMatrix:
    """Keep the min(k, nnz) largest stored values in each row.

    Ties break toward the smaller column index. k must be >= 1.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    m = canonicalize(m)
    ptr, idx, val = m.indptr, m.indices, m.data
    keep = np.zeros(m.nnz, dtype=bool)
    for r in range(m.shape[0]):
        lo, hi = ptr[r], ptr[r + 1]
        if hi - lo <= k:
            keep[lo:hi] = True
            continue
        # stable sort on -value: equal values keep ascending column order
        order = np.argsort(-val[lo:hi], kind="stable")[:k]
        keep[lo + order] = True
    row_ids = np.repeat(np.arange(m.shape[0]), np.diff(ptr))
    per_row = np.bincount(row_ids[keep], minlength=m.shape[0])
    new_ptr = np.zeros(m.shape[0] + 1, dtype=np.int64)
    new_ptr[1:] = np.cumsum(per_row)
    out = sp.csr_matrix((val[keep], idx[keep], new_ptr), shape=m.shape)
    return canonicalize(out)


def row_l2_normalize(m: SparseMatrix) -> SparseMatrix:
    """Scale each row to unit l2 norm; zero rows pass through unchanged."""
    m = canonicalize(m)
    norms = row_l2_norms(m)
    scale = np.ones_like(norms)
    nz = norms > 0
    scale[nz] = 1.0 / norms[nz]
    out = m.copy()
    out.data = (out.data.astype(np.float64)
                * np.repeat(scale, np.diff(m.indptr))).astype(np.float32)
    out.eliminate_zeros()
    return out


def row_l2_norms(m: SparseMatrix) -> np.ndarray:
    sq = np.zeros(m.shape[0], dtype=np.float64)
    np.add.at(sq, np.repeat(np.arange(m.shape[0]), np.diff(m.indptr)),
              m.data.astype(np.float64) ** 2)
    return np.sqrt(sq)


def row_l1_norms(m: SparseMatrix) -> np.ndarray:
    out = np.zeros(m.shape[0], dtype=np.float64)
    np.add.at(out, np.repeat(np.arange(m.shape[0]), np.diff(m.indptr)),
              np.abs(m.data.astype(np.float64)))
    return out


def dense_dot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b with float64 accumulation, rounded to float32."""
    return (np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)).astype(np.float32)


def axpy(alpha: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (alpha * x + y).astype(np.float32)


def sigmoid(a):
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def log_sigmoid(a):
    """ln(sigmoid(a)), numerically stable for large |a|."""
    a = np.asarray(a, dtype=np.float64)
    return -np.logaddexp(0.0, -a)


def save_xrsm(path, m: SparseMatrix) -> None:
    """Write the binary on-disk CSR format.

    Layout (little-endian): magic "XRSM", version u32, n_rows u64,
    n_cols u64, nnz u64, then row_ptr as u64, col_idx as u32, values as f32.
    """
    m = canonicalize(m)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sIQQQ", XRSM_MAGIC, XRSM_VERSION,
                            m.shape[0], m.shape[1], m.nnz))
        f.write(np.asarray(m.indptr, dtype="<u8").tobytes())
        f.write(np.asarray(m.indices, dtype="<u4").tobytes())
        f.write(np.asarray(m.data, dtype="<f4").tobytes())


def load_xrsm(path) -> SparseMatrix:
    with open(path, "rb") as f:
        head = f.read(struct.calcsize("<4sIQQQ"))
        magic, version, n_rows, n_cols, nnz = struct.unpack("<4sIQQQ", head)
        if magic != XRSM_MAGIC:
            raise ValueError(f"{path}: not an XRSM file")
        if version != XRSM_VERSION:
            raise ValueError(f"{path}: unsupported XRSM version {version}")
        indptr = np.frombuffer(f.read(8 * (n_rows + 1)), dtype="<u8").astype(np.int64)
        indices = np.frombuffer(f.read(4 * nnz), dtype="<u4").astype(np.int32)
        data = np.frombuffer(f.read(4 * nnz), dtype="<f4").astype(np.float32)
    m = sp.csr_matrix((data, indices, indptr), shape=(n_rows, n_cols))
    m = canonicalize(m)
    validate(m)
    return m
