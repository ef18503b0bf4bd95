"""End-to-end training and beam-search inference.

Training runs in four stages. (1) Statistical features are built (or
ingested pre-vectorized) and row-normalized. (2) If the encoder is enabled,
a preliminary tree over aggregated label features drives the recursive
curriculum: at each level the shortlist admits children of the previously
predicted top clusters plus children of the true clusters, the output
weights are bootstrapped by a convex solve on frozen embeddings, and the
encoder trains jointly with them; a transient linear model on the
concatenated features then produces the next level's predicted clusters.
(3) A refined tree is built over the final concatenated features. (4) With
the encoder frozen, per-level linear rankers train on the concatenated
features over shortlisted pairs only.

Inference walks the refined tree keeping the best `beam` nodes per level;
a node's score is its parent's score plus ln(sigmoid(w . x)), so rankings
are comparable across paths, and only children of surviving nodes are ever
scored (the per-instance column budget is beam * branching * depth).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import sparse
from .config import RunConfig
from .data import Dataset
from .encoder import (EncoderModel, TrainConfig, bootstrap_ranker, embed,
                      init_encoder, train_level)
from .signals import build_signals
from .solver import fit_ova_columns
from .tree import HierarchicalLabelTree, build_tree, parse_shape, pifa
from .vectorizer import (ConcatFeatures, TfidfConfig, TfidfModel,
                         concat_features, fit_tfidf, transform_tfidf)

MODEL_FORMAT_VERSION = 1


@dataclass
class PredictStats:
    """Counts ranker columns evaluated per instance during inference."""

    columns_evaluated: np.ndarray

    @classmethod
    def for_rows(cls, n):
        return cls(columns_evaluated=np.zeros(n, dtype=np.int64))


@dataclass
class XrModel:
    hyper: dict
    tree: HierarchicalLabelTree
    rankers: list                      # per level, d_cat x K_t (CSC)
    tfidf_model: TfidfModel | None = None
    encoder: EncoderModel | None = None
    d_features: int = 0                # statistical feature dimension

    @property
    def depth(self):
        return self.tree.depth

    @property
    def n_labels(self):
        return self.tree.n_labels


class StageError(RuntimeError):
    pass


def full_shortlist(n_rows, n_cols) -> sparse.SparseMatrix:
    return sparse.canonicalize(
        sp.csr_matrix(np.ones((n_rows, n_cols), dtype=np.float32)))


def make_shortlist(p_prev, y_prev, c_t) -> sparse.SparseMatrix:
    """Union of children of predicted parents and children of true parents.

    At the root (single parent) pass p_prev=None: every node is admitted.
    """
    if p_prev is None and y_prev is None:
        raise ValueError("need p_prev or y_prev")
    if p_prev is None or p_prev.nnz == 0:
        expanded = sparse.spmm(sparse.binarize(y_prev), c_t, transpose_b=True)
        return sparse.binarize(expanded)
    pred = sparse.binarize(
        sparse.spmm(sparse.binarize(p_prev), c_t, transpose_b=True))
    if y_prev is None or y_prev.nnz == 0:
        return pred
    true = sparse.binarize(
        sparse.spmm(sparse.binarize(y_prev), c_t, transpose_b=True))
    return sparse.binarize(sparse.canonicalize(pred + true))


def dense_topk(x: sparse.SparseMatrix, w_csc, k, block=1024) -> sparse.SparseMatrix:
    """Top-k columns per row of x @ w, scored over every column.

    Stored values are rank weights (k down to 1), not raw scores: the
    result feeds shortlist construction, which only reads the pattern, and
    rank weights survive sparse canonicalization even for zero scores.
    """
    n = x.shape[0]
    n_cols = w_csc.shape[1]
    k = min(k, n_cols)
    w_dense = None
    if n_cols * w_csc.shape[0] <= 4_000_000:
        w_dense = w_csc.toarray()
    rows, cols, vals = [], [], []
    for lo in range(0, n, block):
        xb = x[lo:lo + block]
        scores = xb @ w_dense if w_dense is not None else (xb @ w_csc).toarray()
        scores = np.asarray(scores)
        order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
        for i in range(scores.shape[0]):
            rows.append(np.full(k, lo + i, dtype=np.int64))
            cols.append(order[i])
            vals.append(np.arange(k, 0, -1, dtype=np.float32))
    m = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n_cols))
    return sparse.canonicalize(m)


def predict_level(w_csc, x, beam_prev, c_t, k,
                  stats: PredictStats | None = None) -> sparse.SparseMatrix:
    """Score children of surviving beam nodes and keep the top k per row.

    beam_prev=None means the root level: every node is a candidate with
    parent score zero. Stored values are accumulated path scores
    (sums of ln sigmoid of the per-level ranker scores).
    """
    n = x.shape[0]
    k_t = c_t.shape[0]
    if beam_prev is None:
        raw = np.asarray((x @ w_csc).todense(), dtype=np.float64)
        if stats is not None:
            stats.columns_evaluated += k_t
        scores = sparse.canonicalize(sp.csr_matrix(sparse.log_sigmoid(raw)))
        return sparse.top_k_per_row(scores, min(k, k_t))
    cand = sparse.spmm(sparse.binarize(beam_prev), c_t, transpose_b=True)
    parent_score = sparse.spmm(beam_prev, c_t, transpose_b=True)
    # cand carries the pattern; parent_score the values (may store zeros
    # dropped by canonicalization, so look them up per pair)
    cand_csc = cand.tocsc()
    ps_csc = parent_score.tocsc()
    rows_out, cols_out, vals_out = [], [], []
    for c in range(k_t):
        lo, hi = cand_csc.indptr[c], cand_csc.indptr[c + 1]
        if lo == hi:
            continue
        rows = cand_csc.indices[lo:hi]
        plo, phi = ps_csc.indptr[c], ps_csc.indptr[c + 1]
        pvals = np.zeros(len(rows))
        if phi > plo:
            pos = np.searchsorted(rows, ps_csc.indices[plo:phi])
            pvals[pos] = ps_csc.data[plo:phi]
        s = np.asarray((x[rows] @ w_csc[:, c]).todense()).ravel()
        if stats is not None:
            stats.columns_evaluated[rows] += 1
        rows_out.append(rows.astype(np.int64))
        cols_out.append(np.full(len(rows), c, dtype=np.int64))
        vals_out.append(pvals + sparse.log_sigmoid(s))
    if not rows_out:
        return sparse.canonicalize(sp.csr_matrix((n, k_t), dtype=np.float32))
    m = sp.csr_matrix(
        (np.concatenate(vals_out).astype(np.float32),
         (np.concatenate(rows_out), np.concatenate(cols_out))),
        shape=(n, k_t))
    return sparse.top_k_per_row(sparse.canonicalize(m), k)


def train_ranker_level(x, y_t, m_t, pos_weights, neg_weight, lam,
                       loss="squared_hinge", tol=1e-3, max_epochs=100,
                       prune=0.1, seed=0):
    """Per-column convex solve of the weighted loss over shortlisted rows."""
    return fit_ova_columns(x, m_t, y_t, pos_weights, neg_weight, lam,
                           loss=loss, tol=tol, max_epochs=max_epochs,
                           prune=prune, seed=seed)


def _resolve_shape(spec_text, n_labels, branching, max_leaf_size):
    if spec_text == "auto":
        return None
    shape = parse_shape(spec_text)
    return shape


def _split_steps(total, levels):
    base, extra = divmod(total, levels)
    return [base + (1 if i < extra else 0) for i in range(levels)]


def _status(log, message):
    if log:
        log(message)


def fit(dataset: Dataset, cfg: RunConfig, log=None) -> XrModel:
    """Run the full training pipeline and assemble the model."""
    cfg.validate()
    tc = cfg.trainer
    stage = "vectorize"
    try:
        tfidf_model = None
        if dataset.features is not None:
            x_stat = sparse.row_l2_normalize(dataset.features)
        else:
            if not dataset.texts:
                raise ValueError("dataset has neither features nor texts")
            tfidf_cfg = TfidfConfig(
                lowercase=cfg.vectorizer.lowercase,
                ngram_range=(1, cfg.vectorizer.ngram_max),
                min_df=cfg.vectorizer.min_df)
            tfidf_model = fit_tfidf(dataset.texts, tfidf_cfg)
            x_stat = transform_tfidf(tfidf_model, dataset.texts)
        y = sparse.binarize(dataset.labels)
        n, n_labels = y.shape
        _status(log, f"[{stage}] {n} instances, {n_labels} labels, "
                     f"d={x_stat.shape[1]}")

        enc = None
        if cfg.encoder.enabled:
            stage = "curriculum"
            enc = init_encoder(d_in=cfg.encoder.d_in, hidden=cfg.encoder.hidden,
                               d_dnn=cfg.encoder.d_dnn, seed=cfg.encoder.seed,
                               hash_seed=cfg.encoder.seed)
            z_hat = pifa(x_stat, y)
            prelim_tree = build_tree(
                z_hat,
                shape=_resolve_shape(cfg.tree.hlt_prelim, n_labels,
                                     cfg.tree.branching, cfg.tree.max_leaf_size),
                branching=cfg.tree.branching,
                max_leaf_size=cfg.tree.max_leaf_size,
                seed=cfg.tree.seed, max_iters=cfg.tree.kmeans_iters)
            sig_hat = build_signals(y, prelim_tree, tc.alpha,
                                    cost_sensitive=tc.cost_sensitive)
            d_hat = prelim_tree.depth
            steps = _split_steps(cfg.encoder.n_step, d_hat)
            offset = 0
            p_prev = None
            _status(log, f"[{stage}] preliminary tree "
                         f"{'-'.join(str(s) for s in prelim_tree.level_sizes)}")
            for t in range(1, d_hat + 1):
                y_t = sig_hat.Y[t - 1]
                k_t = y_t.shape[1]
                if t == 1:
                    m_t = full_shortlist(n, k_t)
                    w_init = None
                else:
                    m_t = make_shortlist(p_prev, sig_hat.Y[t - 2],
                                         prelim_tree.indexers[t - 1])
                    e_prev = embed(enc, x_stat)
                    w_init = bootstrap_ranker(
                        e_prev, y_t, m_t, sig_hat.R_hat[t - 1], tc.alpha,
                        tc.lam, loss=cfg.encoder.loss,
                        cost_sensitive=tc.cost_sensitive,
                        tol=tc.solver_tol, max_epochs=tc.solver_epochs,
                        seed=tc.seed + t)
                level_cfg = TrainConfig(
                    lr_max=cfg.encoder.lr_max, n_step=steps[t - 1],
                    batch_size=cfg.encoder.batch_size, loss=cfg.encoder.loss,
                    lam=tc.lam, seed=cfg.encoder.seed + t,
                    schedule_total=cfg.encoder.n_step, schedule_offset=offset)
                enc, _ = train_level(enc, x_stat, y_t, m_t,
                                     sig_hat.R_hat[t - 1], tc.alpha,
                                     w_init, level_cfg,
                                     cost_sensitive=tc.cost_sensitive)
                offset += steps[t - 1]
                feats = concat_features(x_stat, embed(enc, x_stat))
                x_cat = feats.to_csr()
                w_hat = fit_ova_columns(
                    x_cat, m_t, y_t, sig_hat.positive_weights(t),
                    sig_hat.negative_weight(), tc.lam, loss=tc.loss,
                    tol=tc.solver_tol, max_epochs=tc.solver_epochs,
                    prune=0.0, seed=tc.seed + t)
                p_prev = dense_topk(x_cat, w_hat, tc.beam)
                _status(log, f"[{stage}] level {t}/{d_hat} K={k_t} done "
                             f"({steps[t - 1]} encoder steps)")

        stage = "refined-tree"
        feats = concat_features(x_stat, embed(enc, x_stat) if enc else None)
        x_cat = feats.to_csr()
        z = pifa(x_cat, y)
        refined_tree = build_tree(
            z,
            shape=_resolve_shape(cfg.tree.hlt_refine, n_labels,
                                 cfg.tree.branching, cfg.tree.max_leaf_size),
            branching=cfg.tree.branching,
            max_leaf_size=cfg.tree.max_leaf_size,
            seed=cfg.tree.seed + 1, max_iters=cfg.tree.kmeans_iters)
        sig = build_signals(y, refined_tree, tc.alpha,
                            cost_sensitive=tc.cost_sensitive)
        _status(log, f"[{stage}] refined tree "
                     f"{'-'.join(str(s) for s in refined_tree.level_sizes)}")

        stage = "rankers"
        rankers = []
        p_prev = None
        for t in range(1, refined_tree.depth + 1):
            y_t = sig.Y[t - 1]
            if t == 1:
                m_t = full_shortlist(n, y_t.shape[1])
            else:
                m_t = make_shortlist(p_prev, sig.Y[t - 2],
                                     refined_tree.indexers[t - 1])
            w_t = train_ranker_level(
                x_cat, y_t, m_t, sig.positive_weights(t),
                sig.negative_weight(), tc.lam, loss=tc.loss,
                tol=tc.solver_tol, max_epochs=tc.solver_epochs,
                prune=tc.prune, seed=tc.seed + 100 + t)
            rankers.append(w_t)
            if t < refined_tree.depth:
                p_prev = dense_topk(x_cat, w_t, tc.beam)
            _status(log, f"[{stage}] level {t}/{refined_tree.depth} "
                         f"K={y_t.shape[1]} nnz(W)={w_t.nnz}")

        hyper = {
            "alpha": tc.alpha, "lambda": tc.lam, "beam": tc.beam,
            "loss": tc.loss, "prune": tc.prune,
            "cost_sensitive": tc.cost_sensitive,
            "solver_tol": tc.solver_tol, "solver_epochs": tc.solver_epochs,
            "trainer_seed": tc.seed, "tree_seed": cfg.tree.seed,
            "hlt_prelim": cfg.tree.hlt_prelim, "hlt_refine": cfg.tree.hlt_refine,
            "encoder": {
                "enabled": cfg.encoder.enabled, "d_in": cfg.encoder.d_in,
                "hidden": cfg.encoder.hidden, "d_dnn": cfg.encoder.d_dnn,
                "lr_max": cfg.encoder.lr_max, "n_step": cfg.encoder.n_step,
                "batch_size": cfg.encoder.batch_size,
                "loss": cfg.encoder.loss, "seed": cfg.encoder.seed,
                "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
            },
            "vectorizer": {
                "min_df": cfg.vectorizer.min_df,
                "ngram_max": cfg.vectorizer.ngram_max,
                "lowercase": cfg.vectorizer.lowercase,
            },
        }
        return XrModel(hyper=hyper, tree=refined_tree, rankers=rankers,
                       tfidf_model=tfidf_model, encoder=enc,
                       d_features=x_stat.shape[1])
    except Exception as e:
        if isinstance(e, StageError):
            raise
        raise StageError(f"stage[{stage}]: {e}") from e


def model_features(model: XrModel, features=None, texts=None) -> ConcatFeatures:
    """Build the concatenated representation the model was trained on."""
    if texts is not None:
        if model.tfidf_model is None:
            raise ValueError("model was trained on pre-vectorized features; "
                             "pass features, not texts")
        x_stat = transform_tfidf(model.tfidf_model, texts)
    elif features is not None:
        if features.shape[1] != model.d_features:
            raise ValueError(
                f"feature dimension {features.shape[1]} != model's "
                f"{model.d_features}")
        x_stat = sparse.row_l2_normalize(features)
    else:
        raise ValueError("need features or texts")
    dnn = embed(model.encoder, x_stat) if model.encoder is not None else None
    return concat_features(x_stat, dnn)


def predict(model: XrModel, features=None, texts=None, beam=None, topk=10,
            stats: PredictStats | None = None) -> sparse.SparseMatrix:
    """Beam-search inference; returns an N x L sparse matrix of path scores
    for the topk surviving labels per row."""
    beam = beam or model.hyper.get("beam", 10)
    feats = model_features(model, features=features, texts=texts)
    x = feats.to_csr()
    beam_mat = None
    depth = model.depth
    for t in range(1, depth + 1):
        keep = topk if t == depth else beam
        beam_mat = predict_level(model.rankers[t - 1], x, beam_mat,
                                 model.tree.indexers[t - 1], keep, stats)
    return beam_mat


def save_model(model: XrModel, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": "xrtree-model",
        "n_labels": model.n_labels,
        "levels": model.tree.level_sizes,
        "d_features": model.d_features,
        "has_tfidf": model.tfidf_model is not None,
        "has_encoder": model.encoder is not None,
        "hyper": model.hyper,
    }
    if model.encoder is not None:
        enc_dir = os.path.join(out_dir, "encoder")
        os.makedirs(enc_dir, exist_ok=True)
        tensors = model.encoder.params()
        for name, tensor in tensors.items():
            np.save(os.path.join(enc_dir, f"{name}.npy"), tensor)
        manifest["encoder"] = {
            "d_in": model.encoder.d_in, "hidden": model.encoder.hidden,
            "d_dnn": model.encoder.d_dnn, "hash_seed": model.encoder.hash_seed,
            "tensors": {name: list(t.shape) for name, t in tensors.items()},
        }
    if model.tfidf_model is not None:
        tf_dir = os.path.join(out_dir, "tfidf")
        os.makedirs(tf_dir, exist_ok=True)
        vocab_items = sorted(model.tfidf_model.vocabulary.items(),
                             key=lambda kv: kv[1])
        with open(os.path.join(tf_dir, "vocab.tsv"), "w", encoding="utf-8") as f:
            for token, idx in vocab_items:
                f.write(f"{token}\t{idx}\n")
        model.tfidf_model.idf.astype("<f4").tofile(
            os.path.join(tf_dir, "idf.f32"))
        manifest["tfidf"] = {
            "min_df": model.tfidf_model.config.min_df,
            "ngram_max": model.tfidf_model.config.ngram_range[1],
            "lowercase": model.tfidf_model.config.lowercase,
            "d_tfidf": model.tfidf_model.d_tfidf,
        }
    tree_dir = os.path.join(out_dir, "tree")
    os.makedirs(tree_dir, exist_ok=True)
    for t, c in enumerate(model.tree.indexers, start=1):
        sparse.save_xrsm(os.path.join(tree_dir, f"C_{t}.xrsm"), c)
    rank_dir = os.path.join(out_dir, "ranker")
    os.makedirs(rank_dir, exist_ok=True)
    for t, w in enumerate(model.rankers, start=1):
        sparse.save_xrsm(os.path.join(rank_dir, f"W_{t}.xrsm"),
                         sparse.canonicalize(w.tocsr()))
    with open(os.path.join(out_dir, "manifest.json"), "w",
              encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")


def _require(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing model component: {path}")
    return path


def load_model(model_dir) -> XrModel:
    with open(_require(os.path.join(model_dir, "manifest.json")),
              encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("kind") != "xrtree-model":
        raise ValueError(f"{model_dir}: not a model directory")
    levels = manifest["levels"]
    indexers = [
        sparse.load_xrsm(_require(os.path.join(model_dir, "tree", f"C_{t}.xrsm")))
        for t in range(1, len(levels) + 1)]
    rankers = [
        sparse.load_xrsm(_require(
            os.path.join(model_dir, "ranker", f"W_{t}.xrsm"))).tocsc()
        for t in range(1, len(levels) + 1)]
    encoder = None
    if manifest["has_encoder"]:
        meta = manifest["encoder"]
        tensors = {}
        for name in ("w1", "b1", "w2", "b2"):
            tensors[name] = np.load(_require(
                os.path.join(model_dir, "encoder", f"{name}.npy")))
        encoder = EncoderModel(
            d_in=meta["d_in"], hidden=meta["hidden"], d_dnn=meta["d_dnn"],
            hash_seed=meta["hash_seed"], **tensors)
    tfidf_model = None
    if manifest["has_tfidf"]:
        meta = manifest["tfidf"]
        vocab = {}
        with open(_require(os.path.join(model_dir, "tfidf", "vocab.tsv")),
                  encoding="utf-8") as f:
            for line in f:
                token, _, idx = line.rstrip("\n").partition("\t")
                vocab[token] = int(idx)
        idf = np.fromfile(os.path.join(model_dir, "tfidf", "idf.f32"),
                          dtype="<f4")
        tfidf_model = TfidfModel(
            vocabulary=vocab, idf=idf.astype(np.float32),
            config=TfidfConfig(lowercase=meta["lowercase"],
                               ngram_range=(1, meta["ngram_max"]),
                               min_df=meta["min_df"]))
    return XrModel(hyper=manifest["hyper"],
                   tree=HierarchicalLabelTree(indexers=indexers),
                   rankers=rankers, tfidf_model=tfidf_model, encoder=encoder,
                   d_features=manifest["d_features"])
