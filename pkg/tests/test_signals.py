import numpy as np
import pytest

from xrtree import sparse
from xrtree.signals import build_signals, relevance_weight
from xrtree.tree import HierarchicalLabelTree, build_tree


def two_level_tree():
    """Four labels grouped {0,1} and {2,3} under the root."""
    c1 = sparse.from_dense([[1], [1]])                    # 2 clusters -> root
    c2 = sparse.from_dense([[1, 0], [1, 0], [0, 1], [0, 1]])  # labels -> clusters
    return HierarchicalLabelTree(indexers=[c1, c2])


def random_tree(rng, n_labels, depth):
    d = rng.normal(size=(n_labels, 6))
    z = sparse.from_dense(d / np.linalg.norm(d, axis=1, keepdims=True))
    sizes = sorted(set(
        int(v) for v in rng.integers(2, max(3, n_labels), size=depth - 1)
        if v < n_labels))
    shape = sizes + [n_labels]
    return build_tree(z, shape=shape, seed=int(rng.integers(2**31)), max_iters=3)


class TestBuildSignals:
    def test_hand_example_split_positives(self):
        sig = build_signals(sparse.from_dense([[1, 0, 1, 0]]), two_level_tree())
        np.testing.assert_array_equal(sig.Y[0].toarray(), [[1, 1]])
        np.testing.assert_array_equal(sig.R[0].toarray(), [[1, 1]])
        np.testing.assert_allclose(sig.R_hat[0].toarray(), [[0.5, 0.5]])

    def test_hand_example_collapsed_positives(self):
        sig = build_signals(sparse.from_dense([[1, 1, 0, 0]]), two_level_tree())
        np.testing.assert_array_equal(sig.Y[0].toarray(), [[1, 0]])
        np.testing.assert_array_equal(sig.R[0].toarray(), [[2, 0]])
        np.testing.assert_allclose(sig.R_hat[0].toarray(), [[1.0, 0]])

    def test_zero_label_instance_zero_everywhere(self):
        y = sparse.from_dense([[0, 0, 0, 0], [1, 0, 0, 0]])
        sig = build_signals(y, two_level_tree())
        for t in range(1, sig.depth + 1):
            y_t, r_t, rh_t = sig.level(t)
            assert y_t[0].nnz == 0 and r_t[0].nnz == 0 and rh_t[0].nnz == 0

    def test_leaf_level_is_original(self):
        y = sparse.from_dense([[1, 0, 1, 0], [0, 1, 0, 0]])
        sig = build_signals(y, two_level_tree())
        np.testing.assert_array_equal(sig.Y[-1].toarray(), y.toarray())
        np.testing.assert_array_equal(sig.R[-1].toarray(), y.toarray())

    def test_column_mismatch_rejected(self):
        with pytest.raises(ValueError):
            build_signals(sparse.from_dense([[1, 0]]), two_level_tree())

    def test_mass_conservation_random(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            n_labels = int(rng.integers(6, 64))
            tree = random_tree(rng, n_labels, depth=int(rng.integers(2, 5)))
            y = sparse.from_dense(
                (rng.random((12, n_labels)) < 0.15).astype(np.float32))
            sig = build_signals(y, tree)
            leaf_mass = sparse.row_l1_norms(sig.Y[-1])
            for r in sig.R:
                np.testing.assert_array_equal(sparse.row_l1_norms(r), leaf_mass)

    def test_support_nesting_and_monotone_coarsening(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            n_labels = int(rng.integers(8, 48))
            tree = random_tree(rng, n_labels, depth=3)
            y = sparse.from_dense(
                (rng.random((9, n_labels)) < 0.2).astype(np.float32))
            sig = build_signals(y, tree)
            for t in range(sig.depth):
                yb = sparse.binarize(sig.Y[t])
                rb = sparse.binarize(sig.R[t])
                np.testing.assert_array_equal(yb.toarray(), rb.toarray())
            for t in range(sig.depth - 1):
                fine = np.diff(sig.Y[t + 1].indptr)
                coarse = np.diff(sig.Y[t].indptr)
                assert np.all(coarse <= fine)

    def test_positive_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        tree = random_tree(rng, 20, depth=3)
        y = sparse.from_dense((rng.random((15, 20)) < 0.25).astype(np.float32))
        sig = build_signals(y, tree)
        for rh in sig.R_hat:
            sums = sparse.row_l1_norms(rh)
            nz = sums > 0
            np.testing.assert_allclose(sums[nz], 1.0, atol=1e-6)


class TestRelevanceWeight:
    def test_positive_share(self):
        # 4 positives, one in each of 4 leaf groups collapsing to one pair
        c1 = sparse.from_dense([[1], [1], [1], [1]])
        c2 = sparse.from_dense(np.kron(np.eye(4), np.ones((2, 1))))
        tree = HierarchicalLabelTree(indexers=[c1, c2])
        y = sparse.from_dense([[1, 0, 1, 0, 1, 0, 1, 0]])
        sig = build_signals(y, tree, alpha=0.25)
        assert relevance_weight(sig, 1, 0, 0) == pytest.approx(0.25)

    def test_negative_gets_alpha(self):
        sig = build_signals(sparse.from_dense([[1, 1, 0, 0]]),
                            two_level_tree(), alpha=0.25)
        assert relevance_weight(sig, 1, 0, 1) == pytest.approx(0.25)

    def test_uniform_mode(self):
        sig = build_signals(sparse.from_dense([[1, 0, 1, 0]]),
                            two_level_tree(), alpha=0.25, cost_sensitive=False)
        assert relevance_weight(sig, 1, 0, 0) == 1.0
        assert relevance_weight(sig, 1, 0, 1) == 1.0
        np.testing.assert_array_equal(
            sig.positive_weights(1).toarray(), [[1, 1]])

    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            build_signals(sparse.from_dense([[1, 0, 0, 0]]),
                          two_level_tree(), alpha=-0.1)
