"""Per-column linear solvers for shortlisted one-vs-all problems.

Each output column c independently minimizes

    lam * ||w||^2  +  sum_{i in shortlist(c)} cost_i * L(y_i, w . x_i)

over the rows the shortlist admits for that column. Squared hinge uses
LIBLINEAR-style dual coordinate descent (per-instance cost enters as
C_i = cost_i / (2*lam)); logistic uses damped Newton with conjugate-gradient
inner solves. Columns are independent, so the work is chunked and the
squared-hinge kernel runs column-parallel under numba.

Results are deterministic for any thread count: every column derives its
own shuffle RNG from the base seed and the column index.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit, prange

from . import sparse

LOSSES = ("squared_hinge", "logistic")


@njit(cache=True, inline="always")
def _xorshift(state):
    state ^= state << np.uint64(13)
    state ^= state >> np.uint64(7)
    state ^= state << np.uint64(17)
    return state


@njit(cache=True, parallel=True)
def _dcd_squared_hinge(xdata, xind, xptr, rows_flat, offs, y_flat, c_flat,
                       max_epochs, tol, seed, col_offset, w_out):
    n_cols = offs.shape[0] - 1
    for j in prange(n_cols):
        lo, hi = offs[j], offs[j + 1]
        nws = hi - lo
        if nws == 0:
            continue
        w = w_out[j]
        alpha = np.zeros(nws)
        q_diag = np.empty(nws)
        for ii in range(nws):
            r = rows_flat[lo + ii]
            sq = 0.0
            for p in range(xptr[r], xptr[r + 1]):
                sq += xdata[p] * xdata[p]
            q_diag[ii] = sq + 1.0 / (2.0 * c_flat[lo + ii])
        order = np.arange(nws)
        state = np.uint64(seed) ^ (np.uint64(col_offset + j + 1)
                                   * np.uint64(0x9E3779B97F4A7C15))
        if state == np.uint64(0):
            state = np.uint64(0x2545F4914F6CDD1D)
        for _ in range(max_epochs):
            for ii in range(nws - 1, 0, -1):
                state = _xorshift(state)
                k = int(state % np.uint64(ii + 1))
                order[ii], order[k] = order[k], order[ii]
            max_pg = 0.0
            for t in range(nws):
                ii = order[t]
                r = rows_flat[lo + ii]
                yy = y_flat[lo + ii]
                s = 0.0
                for p in range(xptr[r], xptr[r + 1]):
                    s += w[xind[p]] * xdata[p]
                grad = yy * s - 1.0 + alpha[ii] / (2.0 * c_flat[lo + ii])
                pg = grad
                if alpha[ii] == 0.0 and grad > 0.0:
                    pg = 0.0
                apg = abs(pg)
                if apg > max_pg:
                    max_pg = apg
                if apg > 1e-14:
                    new_a = alpha[ii] - grad / q_diag[ii]
                    if new_a < 0.0:
                        new_a = 0.0
                    delta = new_a - alpha[ii]
                    if delta != 0.0:
                        alpha[ii] = new_a
                        step = delta * yy
                        for p in range(xptr[r], xptr[r + 1]):
                            w[xind[p]] += step * xdata[p]
            if max_pg < tol:
                break


def _column_pairs(shortlist, positives, pos_weights, neg_weight):
    """Flatten per-column working sets into (rows, y, cost, offsets)."""
    m_csc = shortlist.tocsc()
    y_csc = positives.tocsc()
    p_csc = pos_weights.tocsc()
    n_cols = shortlist.shape[1]
    rows_parts, y_parts, c_parts = [], [], []
    offs = np.zeros(n_cols + 1, dtype=np.int64)
    for c in range(n_cols):
        rows = m_csc.indices[m_csc.indptr[c]:m_csc.indptr[c + 1]]
        prow = y_csc.indices[y_csc.indptr[c]:y_csc.indptr[c + 1]]
        pval = p_csc.data[p_csc.indptr[c]:p_csc.indptr[c + 1]]
        y = np.full(len(rows), -1.0)
        cost = np.full(len(rows), float(neg_weight))
        if len(prow):
            where = np.searchsorted(rows, prow)
            covered = len(rows) > 0 and where.max() < len(rows) and \
                np.array_equal(rows[where], prow)
            if not covered:
                raise ValueError(
                    f"shortlist does not cover all positives of column {c}")
            y[where] = 1.0
            cost[where] = pval
        rows_parts.append(rows.astype(np.int64))
        y_parts.append(y)
        c_parts.append(cost)
        offs[c + 1] = offs[c] + len(rows)
    rows_flat = np.concatenate(rows_parts) if rows_parts else np.zeros(0, np.int64)
    y_flat = np.concatenate(y_parts) if y_parts else np.zeros(0)
    c_flat = np.concatenate(c_parts) if c_parts else np.zeros(0)
    return rows_flat, y_flat, c_flat, offs


def _newton_cg_logistic(x_ws, y01, cost, lam, tol, max_iter):
    """Damped Newton for weighted logistic loss with l2 regularization."""
    d = x_ws.shape[1]
    w = np.zeros(d)
    for _ in range(max_iter):
        s = np.asarray(x_ws @ w).ravel()
        p = 1.0 / (1.0 + np.exp(-np.clip(s, -500, 500)))
        grad = np.asarray(x_ws.T @ (cost * (p - y01))).ravel() + 2.0 * lam * w
        gnorm = np.linalg.norm(grad)
        if gnorm < tol:
            break
        dcurve = cost * p * (1.0 - p)

        def hessp(v):
            return np.asarray(
                x_ws.T @ (dcurve * np.asarray(x_ws @ v).ravel())).ravel() \
                + 2.0 * lam * v

        step = _cg(hessp, -grad, max_iter=50, tol=min(0.1, gnorm) * gnorm)
        # backtracking on the true objective
        f0 = _logistic_objective(s, y01, cost, lam, w)
        eta = 1.0
        for _ in range(30):
            w_try = w + eta * step
            s_try = np.asarray(x_ws @ w_try).ravel()
            if _logistic_objective(s_try, y01, cost, lam, w_try) \
                    <= f0 + 1e-4 * eta * grad.dot(step):
                break
            eta *= 0.5
        w = w + eta * step
    return w


def _logistic_objective(s, y01, cost, lam, w):
    # softplus(s) - y*s, numerically stable
    loss = np.logaddexp(0.0, s) - y01 * s
    return float(cost.dot(loss) + lam * w.dot(w))


def _cg(matvec, b, max_iter, tol):
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = r.dot(r)
    for _ in range(max_iter):
        if np.sqrt(rs) < tol:
            break
        ap = matvec(p)
        denom = p.dot(ap)
        if denom <= 0:
            break
        a = rs / denom
        x += a * p
        r -= a * ap
        rs_new = r.dot(r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def fit_ova_columns(features, shortlist, positives, pos_weights,
                    neg_weight, lam, loss="squared_hinge",
                    tol=1e-3, max_epochs=100, prune=0.0, seed=0,
                    chunk_cols=256):
    """Solve every column's weighted one-vs-all problem.

    features : N x d CSR. shortlist / positives / pos_weights : N x K CSR
    (positives' pattern must be covered by the shortlist). Returns a d x K
    CSC float32 matrix with entries below `prune` in magnitude dropped.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    x = sparse.canonicalize(features)
    n, d = x.shape
    n_cols = shortlist.shape[1]
    rows_flat, y_flat, c_flat, offs = _column_pairs(
        sparse.binarize(shortlist), sparse.binarize(positives),
        sparse.canonicalize(pos_weights), neg_weight)

    xdata = x.data.astype(np.float64)
    xind = x.indices.astype(np.int64)
    xptr = x.indptr.astype(np.int64)

    out_cols = []
    for start in range(0, n_cols, chunk_cols):
        stop = min(start + chunk_cols, n_cols)
        w_chunk = np.zeros((stop - start, d))
        if loss == "squared_hinge":
            sub_offs = (offs[start:stop + 1] - offs[start]).astype(np.int64)
            sl = slice(offs[start], offs[stop])
            c_vals = c_flat[sl] / (2.0 * lam)
            _dcd_squared_hinge(xdata, xind, xptr, rows_flat[sl], sub_offs,
                               y_flat[sl], c_vals,
                               np.int64(max_epochs), float(tol),
                               np.uint64(2 * seed + 1), np.int64(start),
                               w_chunk)
        else:
            for j in range(start, stop):
                lo, hi = offs[j], offs[j + 1]
                if lo == hi:
                    continue
                rows = rows_flat[lo:hi]
                w_chunk[j - start] = _newton_cg_logistic(
                    x[rows], (y_flat[lo:hi] + 1.0) / 2.0, c_flat[lo:hi],
                    lam, tol=tol, max_iter=max_epochs)
        if prune > 0:
            w_chunk[np.abs(w_chunk) < prune] = 0.0
        out_cols.append(sp.csc_matrix(w_chunk.T.astype(np.float32)))
    if not out_cols:
        return sp.csc_matrix((d, 0), dtype=np.float32)
    w = sp.hstack(out_cols, format="csc")
    w.sort_indices()
    w.eliminate_zeros()
    return w
