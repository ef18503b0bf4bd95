"""Statistical text vectorization and the two-block concatenated features.

The statistical block is a deterministic TF-IDF model: lowercase, tokens are
maximal runs of Unicode alphanumerics, optional bigrams, min document
frequency cutoff. idf(token) = ln((1+N)/(1+df)) + 1, so values stay finite
and non-negative. The concatenated representation l2-normalizes the
statistical block and the dense semantic block independently, then stacks
them; either block may be zero and passes through as zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import sparse

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class TfidfConfig:
    lowercase: bool = True
    ngram_range: tuple = (1, 1)
    min_df: int = 2


@dataclass
class TfidfModel:
    vocabulary: dict          # token -> column index, bijective onto [0, d_tfidf)
    idf: np.ndarray           # float32, one entry per column
    config: TfidfConfig = field(default_factory=TfidfConfig)

    @property
    def d_tfidf(self):
        return len(self.vocabulary)


def tokenize(text, config: TfidfConfig):
    if config.lowercase:
        text = text.lower()
    unigrams = _TOKEN_RE.findall(text)
    lo, hi = config.ngram_range
    out = []
    for n in range(lo, hi + 1):
        if n == 1:
            out.extend(unigrams)
        else:
            out.extend(" ".join(unigrams[i:i + n])
                       for i in range(len(unigrams) - n + 1))
    return out


def fit_tfidf(corpus, config: TfidfConfig = TfidfConfig()) -> TfidfModel:
    """Build vocabulary and idf table from an iterable of documents.

    Deterministic: vocabulary indices follow lexicographic token order.
    """
    corpus = list(corpus)
    if not corpus:
        raise ValueError("corpus is empty")
    df = {}
    for doc in corpus:
        for tok in set(tokenize(doc, config)):
            df[tok] = df.get(tok, 0) + 1
    n = len(corpus)
    vocab = {tok: i for i, tok in enumerate(
        sorted(t for t, c in df.items() if c >= config.min_df))}
    idf = np.zeros(len(vocab), dtype=np.float32)
    for tok, col in vocab.items():
        idf[col] = np.log((1.0 + n) / (1.0 + df[tok])) + 1.0
    return TfidfModel(vocabulary=vocab, idf=idf, config=config)


def transform_tfidf(model: TfidfModel, documents) -> sparse.SparseMatrix:
    """Rows are raw tf x idf, l2-normalized. Unknown tokens are ignored."""
    indptr = [0]
    indices = []
    data = []
    vocab = model.vocabulary
    for doc in documents:
        counts = {}
        for tok in tokenize(doc, model.config):
            col = vocab.get(tok)
            if col is not None:
                counts[col] = counts.get(col, 0) + 1
        for col in sorted(counts):
            indices.append(col)
            data.append(counts[col] * float(model.idf[col]))
        indptr.append(len(indices))
    m = sp.csr_matrix(
        (np.asarray(data, dtype=np.float32),
         np.asarray(indices, dtype=np.int32),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(indptr) - 1, model.d_tfidf))
    return sparse.row_l2_normalize(m)


@dataclass
class ConcatFeatures:
    """Two-block feature matrix: sparse statistical block + dense semantic
    block, each row-l2-normalized independently.

    The dense block may be absent (statistical-only models)."""

    tfidf: sparse.SparseMatrix
    dnn: np.ndarray | None = None

    @property
    def n_rows(self):
        return self.tfidf.shape[0]

    @property
    def d_cat(self):
        d = self.tfidf.shape[1]
        if self.dnn is not None:
            d += self.dnn.shape[1]
        return d

    def to_csr(self) -> sparse.SparseMatrix:
        """Concatenated N x d_cat sparse matrix (dense block included)."""
        if self.dnn is None:
            return self.tfidf
        return sparse.canonicalize(
            sp.hstack([self.tfidf, sp.csr_matrix(self.dnn)], format="csr"))


def concat_features(tfidf_block: sparse.SparseMatrix,
                    dnn_block: np.ndarray | None) -> ConcatFeatures:
    """Normalize each block's rows to unit l2 norm and pair them up."""
    tfidf_n = sparse.row_l2_normalize(tfidf_block)
    if dnn_block is None:
        return ConcatFeatures(tfidf=tfidf_n, dnn=None)
    dnn = np.asarray(dnn_block, dtype=np.float64)
    norms = np.linalg.norm(dnn, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return ConcatFeatures(tfidf=tfidf_n, dnn=(dnn / norms).astype(np.float32))


def embed_cat(tfidf_row, dnn_row) -> np.ndarray:
    """Single-instance concatenated feature vector (dense).

    Both blocks are l2-normalized independently; zero blocks pass through
    as zero. Intended for small-dimensional use; full-corpus code paths go
    through `concat_features`.
    """
    t = np.asarray(tfidf_row, dtype=np.float64).ravel()
    d = np.asarray(dnn_row, dtype=np.float64).ravel()
    tn = np.linalg.norm(t)
    dn = np.linalg.norm(d)
    out = np.concatenate([t / tn if tn > 0 else t, d / dn if dn > 0 else d])
    return out.astype(np.float32)
