from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wpr.cost_kernel import (
    EmbeddingTable,
    build_cost_matrix,
    build_sparse_kernel,
    read_embeddings,
    write_embeddings,
)
from wpr.errors import ConfigError, ZeroVectorCosine

LINE = EmbeddingTable(np.array([[0.0], [1.0], [3.0]]))


class TestCostMatrix:
    def test_euclidean_line(self):
        c = build_cost_matrix(LINE)
        np.testing.assert_array_equal(c.entries, [[0, 1, 3], [1, 0, 2], [3, 2, 0]])

    def test_cosine_identical_rows(self):
        emb = EmbeddingTable(np.array([[1.0, 2.0], [1.0, 2.0], [2.0, 4.0]]))
        np.testing.assert_allclose(build_cost_matrix(emb, "cosine").entries, 0.0, atol=1e-15)

    def test_cosine_orthogonal(self):
        emb = EmbeddingTable(np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert build_cost_matrix(emb, "cosine").entries[0, 1] == pytest.approx(1.0)

    def test_cosine_zero_vector(self):
        with pytest.raises(ZeroVectorCosine):
            build_cost_matrix(EmbeddingTable(np.array([[0.0, 0.0], [1.0, 0.0]])), "cosine")

    def test_unknown_metric(self):
        with pytest.raises(ValueError):
            build_cost_matrix(LINE, "manhattan")

    @given(arrays(np.float64, st.tuples(st.integers(2, 10), st.integers(1, 4)),
                  elements=st.floats(-5, 5)))
    def test_metric_axioms(self, x):
        c = build_cost_matrix(EmbeddingTable(x)).entries
        assert np.all(c >= 0)
        np.testing.assert_array_equal(c, c.T)
        np.testing.assert_array_equal(np.diag(c), 0.0)


class TestSparseKernel:
    def test_full_k1_is_dense(self):
        c = build_cost_matrix(LINE)
        k = build_sparse_kernel(c, 1.0, 3)
        np.testing.assert_allclose(k.dense_kernel, np.exp(-c.entries), rtol=1e-15)

    def test_nearest_two_pattern(self):
        k = build_sparse_kernel(build_cost_matrix(LINE), 1.0, 2)
        expected = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=bool)
        np.testing.assert_array_equal(k.dense_pattern, expected)
        assert k.dense_kernel[0, 2] == 0.0

    def test_k1_above_d_is_clamped(self):
        k = build_sparse_kernel(build_cost_matrix(LINE), 1.0, 10)
        assert k.k1 == 3 and k.warnings

    def test_underflow_keeps_pattern(self):
        emb = EmbeddingTable(np.array([[0.0], [100.0]]))
        k = build_sparse_kernel(build_cost_matrix(emb), 100.0, 2)
        assert k.dense_kernel[0, 1] == 0.0
        assert k.dense_pattern[0, 1]
        assert np.isfinite(k.log_kernel()[0, 1])

    @given(st.integers(2, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
    def test_symmetric_with_diagonal(self, d, k1, seed):
        x = np.random.default_rng(seed).normal(size=(d, 2))
        k = build_sparse_kernel(build_cost_matrix(EmbeddingTable(x)), 2.0, k1)
        pat = k.dense_pattern
        np.testing.assert_array_equal(pat, pat.T)
        assert np.all(np.diag(pat))
        assert np.all(pat.sum(axis=1) >= min(k1, d))

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            build_sparse_kernel(build_cost_matrix(LINE), 0.0, 2)


class TestEmbeddingIO:
    def test_round_trip_with_labels(self, tmp_path):
        emb = EmbeddingTable(np.array([[0.1, -2.5], [3.0, 1e-17]]), ("a b", "c"))
        path = tmp_path / "e.txt"
        write_embeddings(path, emb)
        back = read_embeddings(path)
        np.testing.assert_array_equal(back.vectors, emb.vectors)
        assert back.token_labels == ("a b", "c")

    def test_round_trip_without_labels(self, tmp_path):
        path = tmp_path / "e.txt"
        write_embeddings(path, LINE)
        back = read_embeddings(path)
        np.testing.assert_array_equal(back.vectors, LINE.vectors)
        assert back.token_labels is None

    @pytest.mark.parametrize("text,line", [
        ("", 1),
        ("2\n1\n2\n", 1),
        ("2 1\n1\n", 2),
        ("2 1\n1\n1 2\n", 3),
        ("2 1\n1\nx\n", 3),
    ])
    def test_malformed(self, tmp_path, text, line):
        path = tmp_path / "bad.txt"
        path.write_text(text)
        with pytest.raises(ConfigError) as err:
            read_embeddings(path)
        assert err.value.line == line
