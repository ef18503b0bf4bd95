"""Trainable semantic embedder with warm-start and bootstrap support.

The reference embedder is a one-hidden-layer tanh network over hash-folded
sparse features: column j of the input folds into bucket
(j * 2654435761 + hash_seed) mod d_in, collisions summing. It stands in for
a heavyweight pre-trained encoder; anything exposing `embed`/`train_level`
semantics can be substituted.

Training jointly optimizes the network parameters and the per-cluster
output weights with Adam under a linear learning-rate decay, restricted to
shortlisted (instance, cluster) pairs, each pair weighted by its relevance
(positives) or the scalar negative weight. `loss_and_grads` is the single
source of truth for the objective; the optimizer and the finite-difference
tests both call it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from . import sparse
from .solver import fit_ova_columns

_FOLD_MULT = 2654435761  # Knuth multiplicative hash


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    n_step: int = 200
    batch_size: int = 32
    loss: str = "squared_hinge"
    lam: float = 0.5
    seed: int = 0
    # linear decay to zero spans [schedule_offset, schedule_total) so one
    # schedule can stretch across several curriculum levels
    schedule_total: int | None = None
    schedule_offset: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class EncoderModel:
    d_in: int
    hidden: int
    d_dnn: int
    hash_seed: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def params(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def with_params(self, p):
        return replace(self, w1=p["w1"], b1=p["b1"], w2=p["w2"], b2=p["b2"])


def init_encoder(d_in=2**16, hidden=256, d_dnn=128, seed=0, hash_seed=0) -> EncoderModel:
    """Xavier-uniform initialization with a fixed seed."""
    rng = np.random.default_rng(seed)

    def xavier(fan_in, fan_out):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(np.float32)

    return EncoderModel(
        d_in=d_in, hidden=hidden, d_dnn=d_dnn, hash_seed=hash_seed,
        w1=xavier(d_in, hidden), b1=np.zeros(hidden, dtype=np.float32),
        w2=xavier(hidden, d_dnn), b2=np.zeros(d_dnn, dtype=np.float32))


def fold_features(features: sparse.SparseMatrix, d_in, hash_seed) -> sparse.SparseMatrix:
    """Fold an N x d matrix into N x d_in by modular column hashing."""
    d = features.shape[1]
    cols = np.arange(d, dtype=np.uint64)
    buckets = ((cols * np.uint64(_FOLD_MULT)) + np.uint64(hash_seed)) % np.uint64(d_in)
    fold = sp.csr_matrix(
        (np.ones(d, dtype=np.float32), buckets.astype(np.int64),
         np.arange(d + 1, dtype=np.int64)),
        shape=(d, d_in))
    return sparse.canonicalize(sparse.canonicalize(features) @ fold)


def _forward(params, xf_block):
    h = np.tanh(xf_block @ params["w1"] + params["b1"])
    return h @ params["w2"] + params["b2"], h


def embed(model: EncoderModel, features: sparse.SparseMatrix,
          block_rows=4096) -> np.ndarray:
    """Embed every row; deterministic given the parameters."""
    xf = fold_features(features, model.d_in, model.hash_seed)
    out = np.empty((xf.shape[0], model.d_dnn), dtype=np.float32)
    params = model.params()
    for lo in range(0, xf.shape[0], block_rows):
        block, _ = _forward(params, xf[lo:lo + block_rows])
        out[lo:lo + block_rows] = block.astype(np.float32)
    return out


def pointwise_loss_grad(scores, y_pm, kind):
    """Per-pair loss values and d(loss)/d(score).

    squared_hinge expects targets +-1 on raw scores; logistic is binary
    cross-entropy on sigmoid scores.
    """
    if kind == "squared_hinge":
        margin = np.maximum(0.0, 1.0 - y_pm * scores)
        return margin ** 2, -2.0 * y_pm * margin
    if kind == "logistic":
        y01 = (y_pm + 1.0) / 2.0
        loss = np.logaddexp(0.0, scores) - y01 * scores
        return loss, sparse.sigmoid(scores) - y01
    raise ValueError(f"unknown loss {kind!r}")


def loss_and_grads(params, w_out, xf_batch, pair_rows, pair_cols, y_pm, cost,
                   lam, reg_scale, loss_kind):
    """Objective and gradients for one batch of shortlisted pairs.

    Objective: sum_p cost_p * L(y_p, e_{row_p} . w_out[:, col_p])
    + reg_scale * lam * ||w_out||^2, with e the embedded batch rows.
    Gradients are exact and cover every parameter tensor plus w_out.
    """
    nb = xf_batch.shape[0]
    n_out = w_out.shape[1]
    e, h = _forward(params, xf_batch)
    scores_full = e @ w_out
    s = scores_full[pair_rows, pair_cols]
    losses, dls = pointwise_loss_grad(s, y_pm, loss_kind)
    total = float(cost @ losses) + reg_scale * lam * float(np.sum(w_out * w_out))

    g = sp.csr_matrix((cost * dls, (pair_rows, pair_cols)), shape=(nb, n_out))
    g_w_out = (g.T @ e).T + 2.0 * reg_scale * lam * w_out
    g_e = g @ w_out.T
    g_w2 = h.T @ g_e
    g_b2 = g_e.sum(axis=0)
    g_h = g_e @ params["w2"].T
    g_a = g_h * (1.0 - h * h)
    g_w1 = (xf_batch.T @ g_a)
    g_b1 = g_a.sum(axis=0)
    grads = {"w1": np.asarray(g_w1), "b1": np.asarray(g_b1).ravel(),
             "w2": np.asarray(g_w2), "b2": np.asarray(g_b2).ravel(),
             "w_out": np.asarray(g_w_out)}
    return total, grads


def _batch_pairs(m_rows, y_rows, rhat_rows, neg_weight, cost_sensitive):
    """Aligned pair arrays for one batch slice of the shortlist.

    Returns (rows, cols, y_pm, cost). Positive weights come from the
    normalized relevance (or 1 in uniform mode); negatives get neg_weight.
    """
    a = sparse.binarize(m_rows)
    yb = sparse.binarize(y_rows)
    marker = sparse.canonicalize(a + yb)           # 2 on positives, 1 negatives
    pos = marker.data > 1.5
    if cost_sensitive:
        carrier = sparse.canonicalize(a + rhat_rows)   # 1 + rhat on positives
        pos_cost = carrier.data - 1.0
    else:
        pos_cost = np.ones_like(marker.data)
        neg_weight = 1.0
    rows = np.repeat(np.arange(m_rows.shape[0]), np.diff(marker.indptr))
    cols = marker.indices.astype(np.int64)
    y_pm = np.where(pos, 1.0, -1.0)
    cost = np.where(pos, pos_cost, float(neg_weight))
    return rows, cols, y_pm, cost


def train_level(model: EncoderModel, features, y_t, m_t, rhat_t, alpha,
                w_init, config: TrainConfig,
                cost_sensitive=True) -> tuple:
    """Joint mini-batch training of the encoder and the level's output
    weights, restricted to shortlisted pairs. Returns (model, w_out).
    """
    n = features.shape[0]
    k = y_t.shape[1]
    if m_t.shape != y_t.shape:
        raise ValueError(f"shortlist shape {m_t.shape} != labels {y_t.shape}")
    xf = fold_features(features, model.d_in, model.hash_seed)
    params = {name: t.astype(np.float64) for name, t in model.params().items()}
    if w_init is None:
        w_out = np.zeros((model.d_dnn, k))
    else:
        if w_init.shape != (model.d_dnn, k):
            raise ValueError(
                f"w_init shape {w_init.shape} != ({model.d_dnn}, {k})")
        w_out = np.asarray(w_init, dtype=np.float64).copy()

    total = config.schedule_total or config.n_step
    rng = np.random.default_rng(config.seed)
    mom = {name: np.zeros_like(t) for name, t in params.items()}
    vel = {name: np.zeros_like(t) for name, t in params.items()}
    mom["w_out"] = np.zeros_like(w_out)
    vel["w_out"] = np.zeros_like(w_out)
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps

    m_csr = sparse.binarize(m_t)
    y_csr = sparse.binarize(y_t)
    rhat_csr = sparse.canonicalize(rhat_t)
    order = rng.permutation(n)
    cursor = 0
    for step in range(config.n_step):
        if cursor + config.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        batch = np.sort(order[cursor:cursor + config.batch_size])
        cursor += config.batch_size
        rows, cols, y_pm, cost = _batch_pairs(
            m_csr[batch], y_csr[batch], rhat_csr[batch], alpha, cost_sensitive)
        loss_val, grads = loss_and_grads(
            params, w_out, xf[batch], rows, cols, y_pm, cost,
            config.lam, len(batch) / n, config.loss)
        if not np.isfinite(loss_val):
            raise FloatingPointError(
                f"non-finite training loss at step {step}: {loss_val}")
        lr = config.lr_max * max(
            0.0, 1.0 - (config.schedule_offset + step) / total)
        t_adam = step + 1
        for name in mom:
            g = grads[name]
            mom[name] = b1 * mom[name] + (1 - b1) * g
            vel[name] = b2 * vel[name] + (1 - b2) * (g * g)
            m_hat = mom[name] / (1 - b1 ** t_adam)
            v_hat = vel[name] / (1 - b2 ** t_adam)
            target = w_out if name == "w_out" else params[name]
            target -= lr * m_hat / (np.sqrt(v_hat) + eps)
    for name, t in params.items():
        if not np.all(np.isfinite(t)):
            raise FloatingPointError(f"non-finite parameter tensor {name!r}")
    new_model = model.with_params(
        {name: t.astype(np.float32) for name, t in params.items()})
    return new_model, w_out.astype(np.float32)


def bootstrap_ranker(embeddings, y_t, m_t, rhat_t, alpha, lam,
                     loss="squared_hinge", cost_sensitive=True,
                     tol=1e-3, max_epochs=100, seed=0) -> np.ndarray:
    """Warm-start output weights: per-cluster convex solve on frozen
    embeddings over shortlisted pairs. Returns a dense d_dnn x K array."""
    x = sparse.from_dense(np.asarray(embeddings, dtype=np.float32))
    if cost_sensitive:
        pos_w = rhat_t
        neg_w = alpha
    else:
        pos_w = sparse.binarize(y_t)
        neg_w = 1.0
    w = fit_ova_columns(x, m_t, y_t, pos_w, neg_w, lam, loss=loss,
                        tol=tol, max_epochs=max_epochs, prune=0.0, seed=seed)
    return np.asarray(w.todense(), dtype=np.float32)
