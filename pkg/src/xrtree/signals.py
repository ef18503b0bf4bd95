"""Per-level label and relevance signals induced by a label tree.

Bottom-up from the leaf labels: Y(t) is the presence of any positive
descendant (max-pool through the indexer), R(t) counts positive leaf
descendants, and the normalized relevance divides each positive R entry by
its row's l1 mass. Negative candidates are weighted by the scalar `alpha`
at loss-evaluation time; that branch is never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sparse
from .tree import HierarchicalLabelTree


@dataclass
class MultiResolutionSignals:
    """Ladders indexed 0..D-1 for levels 1..D (leaf level last)."""

    Y: list
    R: list
    R_hat: list   # positive entries only; alpha covers shortlisted negatives
    alpha: float
    cost_sensitive: bool = True

    @property
    def depth(self):
        return len(self.Y)

    def level(self, t):
        """1-based level accessor: (Y(t), R(t), R_hat(t))."""
        return self.Y[t - 1], self.R[t - 1], self.R_hat[t - 1]

    def positive_weights(self, t) -> sparse.SparseMatrix:
        """Loss weights for positive entries at level t (1-based).

        Cost-sensitive: the l1-normalized relevance. Uniform mode: 1 for
        every positive.
        """
        if self.cost_sensitive:
            return self.R_hat[t - 1]
        return sparse.binarize(self.Y[t - 1])

    def negative_weight(self) -> float:
        return self.alpha if self.cost_sensitive else 1.0


def build_signals(y_leaf: sparse.SparseMatrix,
                  tree: HierarchicalLabelTree,
                  alpha: float = 1.0,
                  cost_sensitive: bool = True) -> MultiResolutionSignals:
    """Materialize Y, R and normalized-R ladders for every tree level."""
    if y_leaf.shape[1] != tree.n_labels:
        raise ValueError(
            f"label matrix has {y_leaf.shape[1]} columns, tree indexes "
            f"{tree.n_labels} labels")
    if alpha < 0:
        raise ValueError(f"alpha must be non-negative, got {alpha}")
    y_d = sparse.binarize(y_leaf)
    ys = [y_d]
    rs = [sparse.canonicalize(y_d.copy())]
    for c_t in reversed(tree.indexers[1:]):
        ys.append(sparse.binarize(sparse.spmm(ys[-1], c_t)))
        rs.append(sparse.spmm(rs[-1], c_t))
    ys.reverse()
    rs.reverse()
    r_hats = [_l1_normalize_positives(r) for r in rs]
    return MultiResolutionSignals(Y=ys, R=rs, R_hat=r_hats, alpha=alpha,
                                  cost_sensitive=cost_sensitive)


def _l1_normalize_positives(r: sparse.SparseMatrix) -> sparse.SparseMatrix:
    out = r.copy()
    mass = sparse.row_l1_norms(r)
    scale = np.ones_like(mass)
    nz = mass > 0
    scale[nz] = 1.0 / mass[nz]
    out.data = (out.data.astype(np.float64)
                * np.repeat(scale, np.diff(r.indptr))).astype(np.float32)
    return sparse.canonicalize(out)


def relevance_weight(signals: MultiResolutionSignals, t, i, j) -> float:
    """Loss weight of entry (i, j) at level t: normalized relevance for
    positives, alpha for shortlisted negatives (uniform mode: 1 for both)."""
    y_t = signals.Y[t - 1]
    is_positive = y_t[i, j] != 0
    if not signals.cost_sensitive:
        return 1.0
    if is_positive:
        return float(signals.R_hat[t - 1][i, j])
    return signals.alpha
