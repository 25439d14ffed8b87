"""tf-idf features and the multi-label LDA projection."""

import math

import numpy as np
import pytest
import scipy.linalg

from protvecgen import mlda as M
from protvecgen.corpus import ProteinRecord


def _rec(rid, seq):
    return ProteinRecord(rid, seq, frozenset({"GO:0000001"}))


# -- tf-idf -----------------------------------------------------------------


def test_tfidf_worked_example():
    # "ACD" appears in both docs (idf 0); "CDE" and "DEF" only in doc 1,
    # with equal weight, so each normalizes to 1/sqrt(2).
    recs = [_rec("a", "ACDEF"), _rec("b", "ACDW")]
    model = M.tfidf_fit(recs, n=3, max_terms=None)
    x = M.tfidf_transform(model, recs[0])
    assert x[model.term_index["ACD"]] == 0.0
    assert x[model.term_index["CDE"]] == pytest.approx(1.0 / math.sqrt(2))
    assert x[model.term_index["DEF"]] == pytest.approx(1.0 / math.sqrt(2))
    assert np.linalg.norm(x) == pytest.approx(1.0)


def test_tfidf_counts_multiply_idf():
    recs = [_rec("a", "ACDACD"), _rec("b", "WWWW")]
    model = M.tfidf_fit(recs, n=3, max_terms=None)
    x = M.tfidf_transform(model, recs[0])
    raw = {t: c * math.log(2 / 1)
           for t, c in M._nmer_counts("ACDACD", 3).items()}
    expect = np.zeros(model.dim)
    for t, v in raw.items():
        expect[model.term_index[t]] = v
    expect /= np.linalg.norm(expect)
    np.testing.assert_allclose(x, expect, atol=1e-12)


def test_tfidf_term_cap_by_df_then_lex():
    # df: ACD=2, CDE=1, DEA=1 -> cap 2 keeps ACD and CDE (lex tie-break).
    recs = [_rec("a", "ACDEA"), _rec("b", "ACD")]
    model = M.tfidf_fit(recs, n=3, max_terms=2)
    assert set(model.term_index) == {"ACD", "CDE"}
    # columns are lexicographic among the kept terms
    assert model.term_index["ACD"] == 0


def test_tfidf_oov_ignored_and_zero_vector():
    model = M.tfidf_fit([_rec("a", "ACDE"), _rec("b", "FGHI")], n=3)
    x = M.tfidf_transform(model, _rec("q", "WWWWW"))
    assert np.all(x == 0.0)


def test_tfidf_empty_corpus():
    with pytest.raises(M.MldaError):
        M.tfidf_fit([])


# -- scatter matrices -------------------------------------------------------


def reference_scatter(X, Y):
    """Loop oracle for the multi-label scatter pair."""
    n, d = X.shape
    K = Y.shape[1]
    counts = Y.sum(axis=0)
    means = np.array([X[Y[:, k] > 0].mean(axis=0) for k in range(K)])
    gmean = (means * counts[:, None]).sum(axis=0) / counts.sum()
    S_b = np.zeros((d, d))
    S_w = np.zeros((d, d))
    for k in range(K):
        dm = means[k] - gmean
        S_b += counts[k] * np.outer(dm, dm)
        for i in range(n):
            if Y[i, k] > 0:
                dx = X[i] - means[k]
                S_w += np.outer(dx, dx)
    return S_b, S_w


def _random_problem(rng, n=40, d=6, K=3):
    X = rng.normal(size=(n, d))
    Y = np.zeros((n, K))
    for i in range(n):
        picks = rng.choice(K, size=rng.integers(1, K + 1), replace=False)
        Y[i, picks] = 1.0
    X += Y @ rng.normal(scale=2.0, size=(K, d))  # separable-ish classes
    return X, Y


def test_scatter_matches_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(10):
        X, Y = _random_problem(rng)
        S_b, S_w, means, gmean, counts = M.scatter_matrices(X, Y)
        rb, rw = reference_scatter(X, Y)
        np.testing.assert_allclose(S_b, rb, atol=1e-9)
        np.testing.assert_allclose(S_w, rw, atol=1e-9)
        np.testing.assert_array_equal(counts, Y.sum(axis=0))


def test_scatter_rejects_empty_class():
    X = np.eye(3)
    Y = np.array([[1, 0], [1, 0], [1, 0]], dtype=float)
    with pytest.raises(M.MldaError, match="class index 1"):
        M.scatter_matrices(X, Y)


# -- MLDA fit ---------------------------------------------------------------


def principal_angles(U, V):
    """Largest principal angle between the column spaces of U and V."""
    qu, _ = np.linalg.qr(U)
    qv, _ = np.linalg.qr(V)
    s = np.clip(np.linalg.svd(qu.T @ qv, compute_uv=False), -1.0, 1.0)
    return np.arccos(s.min())


def reference_mlda_subspace(X, Y, ridge=M.RIDGE_EPS):
    """Independent oracle: eig of inv(S_w_reg) @ S_b, top K-1 space."""
    S_b, S_w = reference_scatter(np.asarray(X, float), np.asarray(Y, float))
    d = X.shape[1]
    S_w_reg = S_w + ridge * (np.trace(S_w) / d) * np.eye(d)
    vals, vecs = np.linalg.eig(np.linalg.solve(S_w_reg, S_b))
    order = np.argsort(vals.real)[::-1][:Y.shape[1] - 1]
    return vecs[:, order].real, vals.real[order]


def test_mlda_subspace_matches_oracle():
    rng = np.random.default_rng(7)
    for _ in range(20):
        X, Y = _random_problem(rng, n=60, d=8, K=4)
        model = M.mlda_fit(X, Y)
        ref_U, ref_vals = reference_mlda_subspace(X, Y)
        assert principal_angles(model.projection, ref_U) <= 1e-6
        np.testing.assert_allclose(model.eigenvalues, ref_vals, rtol=1e-6)


def test_mlda_eigenpair_residuals_small():
    rng = np.random.default_rng(9)
    X, Y = _random_problem(rng, n=80, d=10, K=4)
    S_b, S_w, *_ = M.scatter_matrices(X, Y)
    S_w_reg = S_w + M.RIDGE_EPS * (np.trace(S_w) / X.shape[1]) * np.eye(X.shape[1])
    model = M.mlda_fit(X, Y)
    assert np.all(M.eigen_residuals(model, S_b, S_w_reg) <= 1e-8)


def test_mlda_deterministic_and_canonical():
    rng = np.random.default_rng(11)
    X, Y = _random_problem(rng)
    a = M.mlda_fit(X, Y)
    b = M.mlda_fit(X.copy(), Y.copy())
    np.testing.assert_array_equal(a.projection, b.projection)
    np.testing.assert_allclose(np.linalg.norm(a.projection, axis=0), 1.0)
    assert np.all(np.diff(a.eigenvalues) <= 1e-12)
    for j in range(a.projection.shape[1]):
        col = a.projection[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        assert col[nz[0]] > 0


def test_mlda_output_shape_and_transform():
    rng = np.random.default_rng(13)
    X, Y = _random_problem(rng, n=50, d=7, K=4)
    model = M.mlda_fit(X, Y)
    assert model.projection.shape == (7, 3)
    assert M.mlda_transform(model, X).shape == (50, 3)
    assert M.mlda_transform(model, X[0]).shape == (3,)
    with pytest.raises(M.MldaError, match="dimension"):
        M.mlda_transform(model, np.zeros(5))


def test_mlda_dimension_guard():
    with pytest.raises(M.MldaError, match="below K-1"):
        M.mlda_fit(np.zeros((10, 2)), np.ones((10, 4)))


def test_mlda_separates_planted_classes():
    # Projected class means should be far apart relative to within spread.
    rng = np.random.default_rng(17)
    X, Y = _random_problem(rng, n=120, d=10, K=3)
    model = M.mlda_fit(X, Y)
    Z = M.mlda_transform(model, X)
    means = np.array([Z[Y[:, k] > 0].mean(axis=0) for k in range(3)])
    spread = np.linalg.norm(means[0] - means[1])
    within = np.mean([Z[Y[:, k] > 0].std(axis=0).mean() for k in range(3)])
    assert spread > within


# -- persistence ------------------------------------------------------------


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(19)
    recs = [ProteinRecord(f"p{i}", "".join(rng.choice(list("ACDEFG"), 30)),
                          frozenset({"GO:0000001"})) for i in range(8)]
    tfidf = M.tfidf_fit(recs, n=3)
    X = M.tfidf_matrix(tfidf, recs)
    Y = np.zeros((8, 3))
    Y[:, 0] = 1
    Y[4:, 1] = 1
    Y[::2, 2] = 1
    model = M.mlda_fit(X, Y)
    path = tmp_path / "mlda.model"
    M.save_mlda(tfidf, model, path, config_hash="abc")
    tf2, m2 = M.load_mlda(path)
    assert tf2.term_index == tfidf.term_index
    assert tf2.document_count == tfidf.document_count
    np.testing.assert_array_equal(m2.projection, model.projection)
    np.testing.assert_array_equal(
        M.mlda_transform(m2, M.tfidf_matrix(tf2, recs)),
        M.mlda_transform(model, X))
    # byte-identical rerun
    path2 = tmp_path / "mlda2.model"
    M.save_mlda(tfidf, model, path2, config_hash="abc")
    assert path.read_bytes() == path2.read_bytes()
