"""Baseline feature pipeline: tf-idf over 3-mers plus multi-label LDA.

tf-idf weight of term t in a document is count(t, doc) * ln(N / df(t)),
L2-normalized per document. MLDA projects those vectors to K-1
dimensions through the top generalized eigenvectors of the multi-label
between-class / within-class scatter pair; samples contribute to every
class they carry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .container import read_container, write_container

MODEL_MAGIC = "MLDA0001"
DEFAULT_NMER = 3
DEFAULT_MAX_TERMS = 4000
RIDGE_EPS = 1e-6


class MldaError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tf-idf over n-mers


@dataclass(frozen=True)
class TfidfModel:
    n: int
    term_index: dict        # n-mer -> column
    document_frequency: np.ndarray
    document_count: int

    @property
    def dim(self):
        return len(self.term_index)


def _nmer_counts(sequence, n):
    counts = {}
    for j in range(len(sequence) - n + 1):
        t = sequence[j:j + n]
        counts[t] = counts.get(t, 0) + 1
    return counts


def tfidf_fit(records, n=DEFAULT_NMER, max_terms=DEFAULT_MAX_TERMS):
    """Fit document frequencies on train records.

    Terms are capped at the `max_terms` most document-frequent (ties
    lexicographic) to keep downstream eigensolves tractable.
    """
    records = list(records)
    if not records:
        raise MldaError("cannot fit tf-idf on an empty corpus")
    df = {}
    for rec in records:
        for t in _nmer_counts(rec.sequence, n):
            df[t] = df.get(t, 0) + 1
    ranked = sorted(df, key=lambda t: (-df[t], t))
    if max_terms is not None:
        ranked = ranked[:max_terms]
    term_index = {t: i for i, t in enumerate(sorted(ranked))}
    freqs = np.zeros(len(term_index))
    for t, i in term_index.items():
        freqs[i] = df[t]
    return TfidfModel(n, term_index, freqs, len(records))


def tfidf_transform(model: TfidfModel, record):
    """L2-normalized count * ln(N/df) vector; OOV terms are ignored."""
    x = np.zeros(model.dim)
    for t, c in _nmer_counts(record.sequence, model.n).items():
        i = model.term_index.get(t)
        if i is not None:
            x[i] = c * math.log(model.document_count / model.document_frequency[i])
    norm = np.linalg.norm(x)
    return x / norm if norm > 0 else x


def tfidf_matrix(model: TfidfModel, records):
    return np.array([tfidf_transform(model, r) for r in records])


# ---------------------------------------------------------------------------
# Multi-label LDA


@dataclass(frozen=True)
class MldaModel:
    projection: np.ndarray     # d x (K-1)
    class_means: np.ndarray    # K x d
    global_mean: np.ndarray    # d
    eigenvalues: np.ndarray    # (K-1,), descending


def scatter_matrices(features, labels):
    """Multi-label between-class and within-class scatter (S_b, S_w),
    plus (class_means, global_mean, class_counts)."""
    X = np.asarray(features, dtype=np.float64)
    Y = np.asarray(labels, dtype=np.float64)
    n, d = X.shape
    K = Y.shape[1]
    counts = Y.sum(axis=0)
    zero = np.nonzero(counts == 0)[0]
    if len(zero):
        raise MldaError(f"class index {zero[0]} has no positive samples")

    class_sums = Y.T @ X                      # K x d
    class_means = class_sums / counts[:, None]
    global_mean = class_sums.sum(axis=0) / counts.sum()

    diff = class_means - global_mean
    S_b = (diff * counts[:, None]).T @ diff
    # S_w = sum_k sum_i y_ik (x_i - m_k)(x_i - m_k)^T
    #     = X^T diag(sum_k y_ik) X - sum_k c_k m_k m_k^T
    weights = Y.sum(axis=1)
    S_w = (X * weights[:, None]).T @ X - (class_means * counts[:, None]).T @ class_means
    S_b = 0.5 * (S_b + S_b.T)
    S_w = 0.5 * (S_w + S_w.T)
    if not (np.all(np.isfinite(S_b)) and np.all(np.isfinite(S_w))):
        raise MldaError("non-finite scatter matrices")
    return S_b, S_w, class_means, global_mean, counts


def mlda_fit(features, labels, ridge=RIDGE_EPS):
    """Fit the projection onto the top K-1 generalized eigenvectors.

    The within-class scatter is regularized with a trace-scaled ridge
    before solving the symmetric-definite generalized eigenproblem.
    Columns are unit-norm with the first nonzero entry positive, sorted
    by descending eigenvalue, so the result is deterministic.
    """
    X = np.asarray(features, dtype=np.float64)
    K = np.asarray(labels).shape[1]
    d = X.shape[1]
    if d < K - 1:
        raise MldaError(f"feature dimension {d} below K-1 = {K - 1}")
    S_b, S_w, class_means, global_mean, _ = scatter_matrices(X, labels)
    S_w_reg = S_w + ridge * (np.trace(S_w) / d) * np.eye(d)
    eigvals, eigvecs = scipy.linalg.eigh(S_b, S_w_reg)
    order = np.argsort(eigvals)[::-1][:K - 1]
    values = eigvals[order]
    U = eigvecs[:, order]
    U = U / np.linalg.norm(U, axis=0)
    for j in range(U.shape[1]):
        col = U[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if len(nz) and col[nz[0]] < 0:
            U[:, j] = -col
    return MldaModel(np.ascontiguousarray(U), class_means, global_mean, values)


def mlda_transform(model: MldaModel, x):
    """Project a d-vector (or n x d matrix) to K-1 dimensions."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.projection.shape[0]:
        raise MldaError(
            f"input dimension {x.shape[-1]} != model dimension "
            f"{model.projection.shape[0]}")
    return x @ model.projection


def eigen_residuals(model: MldaModel, S_b, S_w_reg):
    """Relative residual of each retained generalized eigenpair."""
    res = []
    for j, lam in enumerate(model.eigenvalues):
        u = model.projection[:, j]
        res.append(np.linalg.norm(S_b @ u - lam * (S_w_reg @ u))
                   / np.linalg.norm(u))
    return np.array(res)


# ---------------------------------------------------------------------------
# Persistence (tf-idf + projection in one file)


def save_mlda(tfidf: TfidfModel, model: MldaModel, path, config_hash=None):
    terms = sorted(tfidf.term_index, key=tfidf.term_index.get)
    header = {
        "kind": "mlda-baseline",
        "nmer": tfidf.n,
        "terms": terms,
        "document_count": tfidf.document_count,
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    arrays = {
        "document_frequency": tfidf.document_frequency,
        "projection": model.projection,
        "class_means": model.class_means,
        "global_mean": model.global_mean,
        "eigenvalues": model.eigenvalues,
    }
    write_container(path, MODEL_MAGIC, header, arrays)


def load_mlda(path):
    header, arrays = read_container(path, MODEL_MAGIC)
    tfidf = TfidfModel(header["nmer"],
                       {t: i for i, t in enumerate(header["terms"])},
                       arrays["document_frequency"],
                       header["document_count"])
    model = MldaModel(arrays["projection"], arrays["class_means"],
                      arrays["global_mean"], arrays["eigenvalues"])
    return tfidf, model
