"""Label features, balanced spherical k-means, and hierarchical label trees.

A tree over L labels is an ordered list of indexer matrices C(1)..C(D);
C(t) has shape K_t x K_{t-1} with exactly one 1 per row (each node has one
parent), K_0 = 1 and K_D = L. Trees are built top-down by recursively
partitioning label feature vectors with balanced k-means.

The clustering is deterministic given a seed and, by design, a function of
the point multiset only: seeding is farthest-first with order and ties
resolved by projection onto a direction drawn from the seeded RNG, and the
greedy balanced assignment never consults point indices. Permuting the
input rows therefore permutes the output assignment consistently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import sparse


@dataclass
class HierarchicalLabelTree:
    """Indexers C(1)..C(D); level_sizes[t-1] = K_t."""

    indexers: list

    @property
    def depth(self):
        return len(self.indexers)

    @property
    def level_sizes(self):
        return [c.shape[0] for c in self.indexers]

    @property
    def n_labels(self):
        return self.indexers[-1].shape[0]

    @property
    def branching(self):
        """Maximum number of children of any node."""
        return int(max(
            int(np.max(np.asarray(c.sum(axis=0)).ravel())) for c in self.indexers))


def parse_shape(text) -> list:
    """Parse a dash-separated level-size string like "16-256-3956"."""
    try:
        sizes = [int(tok) for tok in str(text).split("-")]
    except ValueError as e:
        raise ValueError(f"bad tree shape {text!r}") from e
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError(f"bad tree shape {text!r}")
    return sizes


def pifa(features: sparse.SparseMatrix, labels: sparse.SparseMatrix) -> sparse.SparseMatrix:
    """Aggregate feature rows of each label's positive instances.

    Row l of the result is the l2-normalized sum of feature rows of
    instances tagged with label l; labels with no positives get zero rows.
    """
    if features.shape[0] != labels.shape[0]:
        raise ValueError(
            f"row mismatch: features {features.shape} vs labels {labels.shape}")
    y = sparse.binarize(labels)
    z = sparse.spmm(sparse.canonicalize(y.T), sparse.canonicalize(features))
    return sparse.row_l2_normalize(z)


def _row_as_dense(points, i):
    row = points[i]
    return np.asarray(row.todense() if sp.issparse(row) else row,
                      dtype=np.float64).ravel()


def _seed_centroids(points, n_clusters, proj):
    """Farthest-first seeding ordered by a random projection.

    Content-based: the chosen seeds depend on point values, not positions,
    so the procedure commutes with row permutations.
    """
    first = int(np.lexsort((np.arange(len(proj)), -proj))[0])
    chosen = [_row_as_dense(points, first)]
    # squared distance on the unit sphere: 2 - 2 cos
    sims = np.asarray(points @ chosen[0], dtype=np.float64).ravel()
    min_d2 = 2.0 - 2.0 * sims
    for _ in range(1, n_clusters):
        pick = int(np.lexsort((proj, min_d2))[-1])
        chosen.append(_row_as_dense(points, pick))
        sims = np.asarray(points @ chosen[-1], dtype=np.float64).ravel()
        min_d2 = np.minimum(min_d2, 2.0 - 2.0 * sims)
    return np.vstack(chosen)


def _balanced_assign(scores, proj, base, extra):
    """Greedy capacity-constrained assignment.

    Points are processed by descending margin (best minus second-best
    score); each takes its best-scoring cluster that still has room.
    Cluster sizes end in {base, base+1} with exactly `extra` of the larger.
    """
    n, b = scores.shape
    part = np.argpartition(-scores, 1, axis=1)[:, :2]
    two = np.take_along_axis(scores, part, axis=1)
    margin = np.abs(two[:, 0] - two[:, 1])
    best = np.max(scores, axis=1)
    order = np.lexsort((proj, -best, -margin))
    sizes = np.zeros(b, dtype=np.int64)
    bonus_used = np.zeros(b, dtype=bool)
    budget = extra
    assign = np.full(n, -1, dtype=np.int64)
    for i in order:
        for c in np.argsort(-scores[i], kind="stable"):
            if sizes[c] < base:
                assign[i] = c
                sizes[c] += 1
                break
            if sizes[c] == base and budget > 0 and not bonus_used[c]:
                assign[i] = c
                sizes[c] += 1
                bonus_used[c] = True
                budget -= 1
                break
    return assign


def balanced_kmeans(points, n_clusters, seed=0, max_iters=20) -> np.ndarray:
    """Partition rows of `points` into `n_clusters` balanced clusters.

    Spherical objective (cosine similarity to the cluster centroid);
    cluster sizes differ by at most one. Returns the assignment vector.
    Deterministic given the seed.
    """
    n = points.shape[0]
    if n_clusters < 2:
        raise ValueError(f"need at least 2 clusters, got {n_clusters}")
    if n_clusters > n:
        raise ValueError(f"{n_clusters} clusters for {n} points")
    rng = np.random.default_rng(seed)
    pts = points.astype(np.float64) if sp.issparse(points) else \
        np.asarray(points, dtype=np.float64)
    proj = np.asarray(pts @ rng.standard_normal(points.shape[1]),
                      dtype=np.float64).ravel()
    centroids = _seed_centroids(pts, n_clusters, proj)
    base, extra = divmod(n, n_clusters)
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        scores = np.asarray(pts @ centroids.T, dtype=np.float64)
        new_assign = _balanced_assign(scores, proj, base, extra)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        centroids = np.zeros_like(centroids)
        for c in range(n_clusters):
            members = np.flatnonzero(assign == c)
            mean = np.asarray(pts[members].mean(axis=0), dtype=np.float64).ravel()
            norm = np.linalg.norm(mean)
            centroids[c] = mean / norm if norm > 0 else mean
    return assign


def _children_counts(label_counts, total_children):
    """Split `total_children` across parents, proportional-by-balance.

    Every parent gets floor or ceil of the average; parents owning more
    labels take the extra child first. Raises if any parent would need
    more children than labels it owns.
    """
    p = len(label_counts)
    base, extra = divmod(total_children, p)
    counts = np.full(p, base, dtype=np.int64)
    if extra:
        order = np.lexsort((np.arange(p), -np.asarray(label_counts)))
        counts[order[:extra]] += 1
    if np.any(counts < 1) or np.any(counts > np.asarray(label_counts)):
        raise ValueError(
            f"infeasible shape: cannot split {label_counts} labels into "
            f"{total_children} clusters")
    return counts


def build_tree(label_features: sparse.SparseMatrix,
               shape=None,
               branching=None,
               max_leaf_size=100,
               seed=0,
               max_iters=20) -> HierarchicalLabelTree:
    """Recursive top-down balanced partitioning of the label set.

    Either pass `shape` (explicit level sizes, last entry = number of
    labels) or `branching` (near-uniform tree with leaf clusters holding
    at most `max_leaf_size` labels).
    """
    n_labels = label_features.shape[0]
    if shape is None:
        if branching is None or branching < 2:
            raise ValueError("need an explicit shape or branching >= 2")
        shape = _auto_shape(n_labels, branching, max_leaf_size)
    shape = list(shape)
    if shape[-1] != n_labels:
        raise ValueError(
            f"shape {shape} does not end at the label count {n_labels}")
    if any(b <= a for a, b in zip(shape, shape[1:])):
        raise ValueError(f"shape {shape} must be strictly increasing")

    z = sparse.canonicalize(label_features)
    groups = [np.arange(n_labels)]
    indexers = []
    for level, k_t in enumerate(shape[:-1], start=1):
        counts = _children_counts([len(g) for g in groups], k_t)
        new_groups = []
        parent_of = []
        for p, (group, c_p) in enumerate(zip(groups, counts)):
            if c_p == 1:
                subgroups = [group]
            elif c_p == len(group):
                subgroups = [group[[i]] for i in range(len(group))]
            else:
                child_seed = np.random.default_rng([seed, level, p]).integers(2**31)
                assign = balanced_kmeans(z[group], int(c_p), seed=child_seed,
                                         max_iters=max_iters)
                subgroups = [group[assign == c] for c in range(c_p)]
            for g in subgroups:
                parent_of.append(p)
                new_groups.append(g)
        indexers.append(_one_hot(parent_of, len(groups)))
        groups = new_groups

    # leaf level: map each label to the node that owns it
    parent_of_label = np.empty(n_labels, dtype=np.int64)
    for node, group in enumerate(groups):
        parent_of_label[group] = node
    indexers.append(_one_hot(parent_of_label, len(groups)))
    return HierarchicalLabelTree(indexers=indexers)


def _auto_shape(n_labels, branching, max_leaf_size):
    if n_labels <= max_leaf_size:
        return [n_labels]
    leaf_parents = -(-n_labels // max_leaf_size)
    sizes = []
    k = branching
    while k < leaf_parents and k < n_labels:
        sizes.append(k)
        k *= branching
    if k < n_labels:
        sizes.append(k)
    sizes.append(n_labels)
    return sizes


def _one_hot(parent_of, n_parents):
    parent_of = np.asarray(parent_of, dtype=np.int64)
    n = len(parent_of)
    m = sp.csr_matrix(
        (np.ones(n, dtype=np.float32), parent_of,
         np.arange(n + 1, dtype=np.int64)),
        shape=(n, n_parents))
    return sparse.canonicalize(m)
