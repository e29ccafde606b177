"""Embedding lookups, random init, and pretrained-vector loading."""

import numpy as np
import pytest

from sentifuse import embeddings as emb
from sentifuse import tensor as tn
from sentifuse.textdata import DataError, Vocabulary
from conftest import check_op_gradient


def small_matrix():
    vocab = Vocabulary(["a", "b"])  # unk + 2 tokens
    weights = tn.Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    return emb.EmbeddingMatrix(weights, vocab), vocab


class TestOneHot:
    def test_dense_indicator(self):
        vocab = Vocabulary(["a", "b", "c"])
        eps = emb.one_hot("a", vocab)
        assert np.array_equal(eps.dense(), [0.0, 1.0, 0.0, 0.0])

    def test_unknown_token_hits_slot_zero(self):
        vocab = Vocabulary(["a"])
        eps = emb.one_hot("zzz", vocab)
        assert eps.index == 0
        assert np.array_equal(eps.dense(), [1.0, 0.0])


class TestLookup:
    def test_selects_column(self):
        matrix, vocab = small_matrix()
        out = emb.lookup(matrix, emb.one_hot("a", vocab))
        assert np.array_equal(out.data, [2.0, 5.0])

    def test_identity_matrix_returns_basis_vector(self):
        vocab = Vocabulary(["a", "b"])
        matrix = emb.EmbeddingMatrix(tn.Tensor(np.eye(3)), vocab)
        out = emb.lookup(matrix, emb.one_hot("b", vocab))
        assert np.array_equal(out.data, [0.0, 0.0, 1.0])

    def test_equals_dense_product_for_every_token(self):
        vocab = Vocabulary(["a", "b", "c", "d"])
        rng = np.random.default_rng(4)
        S = rng.normal(size=(3, len(vocab)))
        matrix = emb.EmbeddingMatrix(tn.Tensor(S), vocab)
        for token in vocab.index_to_token:
            eps = emb.one_hot(token, vocab)
            assert np.allclose(emb.lookup(matrix, eps).data, S @ eps.dense(), atol=1e-15)

    def test_dimension_mismatch_rejected(self):
        matrix, _ = small_matrix()
        with pytest.raises(ValueError):
            emb.lookup(matrix, emb.OneHot(index=0, dim=7))

    def test_out_of_range_index_rejected(self):
        matrix, _ = small_matrix()
        with pytest.raises(IndexError):
            emb.lookup(matrix, emb.OneHot(index=3, dim=3))

    def test_gradient_lands_in_one_column(self):
        matrix, vocab = small_matrix()
        with tn.Graph() as g:
            out = emb.lookup(matrix, emb.one_hot("a", vocab))
            tn.backward(g, tn.l2_norm_sq(out))
        grad = matrix.weights.grad
        assert np.array_equal(grad[:, 1], 2.0 * matrix.weights.data[:, 1])
        assert np.array_equal(grad[:, [0, 2]], np.zeros((2, 2)))

    def test_frozen_matrix_gets_no_gradient(self):
        vocab = Vocabulary(["a", "b"])
        weights = tn.Tensor(np.ones((2, 3)), requires_grad=True)
        matrix = emb.EmbeddingMatrix(weights, vocab, trainable=False)
        assert not matrix.weights.requires_grad


class TestEmbedSequence:
    def test_stacks_rows_in_order(self):
        matrix, _ = small_matrix()
        out = emb.embed_sequence(matrix, [2, 0, 1])
        assert np.array_equal(out.data, [[3.0, 6.0], [1.0, 4.0], [2.0, 5.0]])

    def test_repeated_tokens_accumulate_gradient(self):
        matrix, _ = small_matrix()
        with tn.Graph() as g:
            out = emb.embed_sequence(matrix, [1, 1])
            loss = tn.l2_norm_sq(tn.max_over_rows(out))
            tn.backward(g, loss)
        # both rows read column 1; grads from each row sum into it
        assert np.array_equal(matrix.weights.grad[:, [0, 2]], np.zeros((2, 2)))
        assert np.any(matrix.weights.grad[:, 1] != 0.0)

    def test_gradient_matches_finite_differences(self):
        vocab = Vocabulary(["a", "b", "c"])
        ids = [2, 0, 2, 1]

        def op(w):
            return emb.embed_sequence(emb.EmbeddingMatrix(w, vocab), ids)

        check_op_gradient(op, [(3, 4)], seed=11)

    def test_empty_sequence_rejected(self):
        matrix, _ = small_matrix()
        with pytest.raises(ValueError):
            emb.embed_sequence(matrix, [])


class TestInitGaussian:
    def test_deterministic_per_seed(self):
        vocab = Vocabulary(["a", "b"])
        a = emb.init_gaussian(vocab, 4, seed=3)
        b = emb.init_gaussian(vocab, 4, seed=3)
        c = emb.init_gaussian(vocab, 4, seed=4)
        assert np.array_equal(a.weights.data, b.weights.data)
        assert not np.array_equal(a.weights.data, c.weights.data)

    def test_standard_normal_statistics(self):
        vocab = Vocabulary([f"t{i}" for i in range(999)])  # 1000 with unk
        matrix = emb.init_gaussian(vocab, 100, seed=0)
        values = matrix.weights.data.ravel()
        assert values.size == 100_000
        assert abs(values.mean()) < 0.02
        assert abs(values.std() - 1.0) < 0.02

    def test_coverage_is_zero(self):
        matrix = emb.init_gaussian(Vocabulary(["a"]), 2)
        assert matrix.coverage == 0.0

    def test_bad_dimension_rejected(self):
        with pytest.raises(ValueError):
            emb.init_gaussian(Vocabulary(["a"]), 0)


class TestLoadGlove:
    def test_parses_matching_tokens(self, tmp_path):
        p = tmp_path / "vec.txt"
        p.write_text("good 0.1 0.2\nbad -1 2.5\n", encoding="utf-8")
        vocab = Vocabulary(["good", "bad"])
        matrix = emb.load_glove(p, vocab, 2)
        assert np.array_equal(matrix.weights.data[:, vocab.index("good")], [0.1, 0.2])
        assert np.array_equal(matrix.weights.data[:, vocab.index("bad")], [-1.0, 2.5])

    def test_coverage_fraction(self, tmp_path):
        p = tmp_path / "vec.txt"
        p.write_text("good 0.1 0.2\n", encoding="utf-8")
        vocab = Vocabulary(["good", "bad"])  # 3 slots with unk
        matrix = emb.load_glove(p, vocab, 2)
        assert matrix.coverage == pytest.approx(1.0 / 3.0)

    def test_line_order_does_not_matter(self, tmp_path):
        lines = ["good 0.1 0.2", "bad -1 2.5"]
        a_path, b_path = tmp_path / "a.txt", tmp_path / "b.txt"
        a_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        b_path.write_text("\n".join(reversed(lines)) + "\n", encoding="utf-8")
        vocab = Vocabulary(["good", "bad", "missing"])
        a = emb.load_glove(a_path, vocab, 2, seed=5)
        b = emb.load_glove(b_path, vocab, 2, seed=5)
        assert np.array_equal(a.weights.data, b.weights.data)

    def test_missing_tokens_are_seeded_deterministically(self, tmp_path):
        p = tmp_path / "vec.txt"
        p.write_text("good 0.1 0.2\n", encoding="utf-8")
        vocab = Vocabulary(["good", "bad"])
        a = emb.load_glove(p, vocab, 2, seed=9)
        b = emb.load_glove(p, vocab, 2, seed=9)
        assert np.array_equal(a.weights.data, b.weights.data)

    def test_dimension_mismatch_reports_line(self, tmp_path):
        p = tmp_path / "vec.txt"
        p.write_text("good 0.1 0.2\nbad 0.3\n", encoding="utf-8")
        with pytest.raises(DataError, match=r"vec\.txt:2"):
            emb.load_glove(p, Vocabulary(["good", "bad"]), 2)

    def test_non_numeric_value_reports_line(self, tmp_path):
        p = tmp_path / "vec.txt"
        p.write_text("good x y\n", encoding="utf-8")
        with pytest.raises(DataError, match=r"vec\.txt:1"):
            emb.load_glove(p, Vocabulary(["good"]), 2)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DataError):
            emb.load_glove(tmp_path / "nope.txt", Vocabulary(["a"]), 2)


class TestEmbeddingMatrix:
    def test_column_count_must_match_vocab(self):
        with pytest.raises(ValueError):
            emb.EmbeddingMatrix(tn.Tensor(np.ones((2, 5))), Vocabulary(["a", "b"]))

    def test_trainable_flag_drives_requires_grad(self):
        vocab = Vocabulary(["a"])
        on = emb.EmbeddingMatrix(tn.Tensor(np.ones((2, 2))), vocab, trainable=True)
        off = emb.EmbeddingMatrix(tn.Tensor(np.ones((2, 2))), vocab, trainable=False)
        assert on.weights.requires_grad
        assert not off.weights.requires_grad

    def test_dim_property(self):
        matrix, _ = small_matrix()
        assert matrix.dim == 2
