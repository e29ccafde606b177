"""Tokenizer, vocabulary, corpus loaders, splits, and the bundled toy corpus."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sentifuse import textdata as td


class TestTokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert td.tokenize("Good movie!") == ["good", "movie", "!"]

    def test_empty_string(self):
        assert td.tokenize("") == []

    def test_case_folding(self):
        assert td.tokenize("A a A") == ["a", "a", "a"]

    def test_hyphen_is_its_own_token(self):
        assert td.tokenize("well-done") == ["well", "-", "done"]

    def test_apostrophe_stays_inside_word(self):
        assert td.tokenize("don't stop") == ["don't", "stop"]

    @given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126)))
    def test_idempotent_under_rejoin(self, text):
        tokens = td.tokenize(text)
        assert td.tokenize(" ".join(tokens)) == tokens


class TestVocabulary:
    def test_unknown_slot_is_zero(self):
        v = td.Vocabulary(["a", "b"])
        assert v.index(td.UNK_TOKEN) == 0
        assert v.index("zzz") == 0

    def test_encode_decode_round_trip(self):
        v = td.Vocabulary(["a", "b", "c"])
        ids = v.encode(["c", "a", "b"])
        assert v.decode(ids) == ["c", "a", "b"]

    def test_contains_and_len(self):
        v = td.Vocabulary(["a"])
        assert "a" in v and "b" not in v
        assert len(v) == 2

    def test_duplicate_tokens_rejected(self):
        with pytest.raises(ValueError):
            td.Vocabulary(["a", "a"])


class TestBuildVocab:
    def test_frequency_then_lexicographic_order(self):
        v = td.build_vocab(["a b", "a"])
        assert v.token_to_index == {td.UNK_TOKEN: 0, "a": 1, "b": 2}

    def test_min_count_prunes_rare_tokens(self):
        v = td.build_vocab(["a b"], min_count=2)
        assert len(v) == 1
        assert v.index("a") == 0

    def test_more_frequent_token_gets_lower_index(self):
        v = td.build_vocab(["b b b", "a a"])
        assert v.index("b") == 1
        assert v.index("a") == 2

    def test_ties_break_lexicographically(self):
        v = td.build_vocab(["c a", "a c"])
        assert v.index("a") < v.index("c")

    def test_min_count_below_one_rejected(self):
        with pytest.raises(ValueError):
            td.build_vocab(["a"], min_count=0)

    def test_empty_corpus_rejected(self):
        with pytest.raises(td.DataError):
            td.build_vocab([])


class TestLoadCorpus:
    def test_labeled_tsv_file(self, tmp_path):
        p = tmp_path / "c.tsv"
        p.write_text("1\tgreat film\n0\tdull film\n\n", encoding="utf-8")
        corpus = td.load_corpus(p, "labeled-tsv")
        assert len(corpus) == 2
        assert corpus.num_classes == 2
        assert corpus.examples[0].label == 1
        assert corpus.examples[0].raw_text == "great film"
        assert corpus.vocab.decode(corpus.examples[0].tokens) == ["great", "film"]
        assert corpus.split_spec.kind == "cv"

    def test_tsv_missing_tab_reports_line(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("1\tok line\nno tab here\n", encoding="utf-8")
        with pytest.raises(td.DataError, match=r"bad\.tsv:2"):
            td.load_corpus(p, "labeled-tsv")

    def test_tsv_bad_label_reports_line(self, tmp_path):
        p = tmp_path / "bad.tsv"
        p.write_text("pos\tgreat film\n", encoding="utf-8")
        with pytest.raises(td.DataError, match=r"bad\.tsv:1"):
            td.load_corpus(p, "labeled-tsv")

    def test_two_file_polarity(self, tmp_path):
        (tmp_path / "rt.pos").write_text("great film\nfine work\n", encoding="utf-8")
        (tmp_path / "rt.neg").write_text("dull film\n", encoding="utf-8")
        corpus = td.load_corpus(tmp_path / "rt", "two-file-polarity")
        assert len(corpus) == 3
        labels = corpus.labels()
        assert list(labels) == [0, 1, 1]  # negatives first
        assert corpus.num_classes == 2

    def test_two_file_polarity_missing_file(self, tmp_path):
        (tmp_path / "rt.pos").write_text("great\n", encoding="utf-8")
        with pytest.raises(td.DataError):
            td.load_corpus(tmp_path / "rt", "two-file-polarity")

    def test_split_directory_gets_fixed_spec(self, tmp_path):
        d = tmp_path / "sst"
        d.mkdir()
        (d / "train.tsv").write_text("0\ta a\n1\tb b\n0\tc c\n", encoding="utf-8")
        (d / "dev.tsv").write_text("1\td d\n", encoding="utf-8")
        (d / "test.tsv").write_text("0\te e\n1\tf f\n", encoding="utf-8")
        corpus = td.load_corpus(d, "labeled-tsv")
        spec = corpus.split_spec
        assert spec.kind == "fixed"
        assert spec.train_idx == [0, 1, 2]
        assert spec.dev_idx == [3]
        assert spec.test_idx == [4, 5]
        rounds = td.make_splits(corpus)
        assert rounds == [([0, 1, 2], [4, 5])]

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(td.DataError):
            td.load_corpus(tmp_path / "x", "csv")

    def test_save_tsv_round_trip(self, tmp_path):
        corpus = td.toy_corpus()
        out = tmp_path / "dump.tsv"
        td.save_tsv(corpus, out)
        again = td.load_corpus(out, "labeled-tsv")
        assert len(again) == len(corpus)
        assert again.stats()["label_counts"] == corpus.stats()["label_counts"]
        assert [ex.raw_text for ex in again.examples] == [ex.raw_text for ex in corpus.examples]


class TestMakeSplits:
    def _corpus(self, n):
        pairs = [(f"w{i} x", i % 2) for i in range(n)]
        return td._corpus_from_pairs(pairs, "t", 2, td.SplitSpec(kind="cv"), 1)

    def test_ten_examples_five_folds(self):
        rounds = td.make_splits(self._corpus(10), td.SplitSpec(kind="cv", folds=5))
        assert len(rounds) == 5
        assert all(len(test) == 2 and len(train) == 8 for train, test in rounds)

    def test_fold_sizes_differ_by_at_most_one(self):
        rounds = td.make_splits(self._corpus(11), td.SplitSpec(kind="cv", folds=3))
        sizes = sorted(len(test) for _, test in rounds)
        assert sizes == [3, 4, 4]

    def test_rounds_partition_the_corpus(self):
        corpus = self._corpus(13)
        rounds = td.make_splits(corpus, td.SplitSpec(kind="cv", folds=4, seed=3))
        seen = []
        for train, test in rounds:
            assert set(train) | set(test) == set(range(13))
            assert set(train) & set(test) == set()
            seen += test
        assert sorted(seen) == list(range(13))

    def test_same_seed_reproduces_folds(self):
        corpus = self._corpus(12)
        a = td.make_splits(corpus, td.SplitSpec(kind="cv", folds=3, seed=7))
        b = td.make_splits(corpus, td.SplitSpec(kind="cv", folds=3, seed=7))
        assert a == b

    def test_too_many_folds_rejected(self):
        with pytest.raises(ValueError):
            td.make_splits(self._corpus(3), td.SplitSpec(kind="cv", folds=4))

    def test_single_fold_rejected(self):
        with pytest.raises(ValueError):
            td.make_splits(self._corpus(3), td.SplitSpec(kind="cv", folds=1))

    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=50))
    def test_partition_property(self, k, seed):
        corpus = self._corpus(17)
        rounds = td.make_splits(corpus, td.SplitSpec(kind="cv", folds=k, seed=seed))
        tests = sorted(i for _, test in rounds for i in test)
        assert tests == list(range(17))
        assert max(len(t) for _, t in rounds) - min(len(t) for _, t in rounds) <= 1


class TestToyCorpus:
    def test_shape_and_balance(self):
        corpus = td.toy_corpus()
        stats = corpus.stats()
        assert stats["size"] == 40
        assert stats["num_classes"] == 2
        assert stats["label_counts"] == {0: 20, 1: 20}
        assert corpus.split_spec.kind == "cv"
        assert corpus.split_spec.folds == 5

    def test_polarity_vocabularies_are_disjoint(self):
        corpus = td.toy_corpus()
        pos_words = set()
        neg_words = set()
        for ex in corpus.examples:
            words = set(corpus.vocab.decode(ex.tokens))
            (pos_words if ex.label == 1 else neg_words).update(words)
        only_pos = pos_words - neg_words
        only_neg = neg_words - pos_words
        assert only_pos and only_neg
        assert "great" in only_pos and "dull" in only_neg

    def test_sentences_are_short(self):
        corpus = td.toy_corpus()
        lengths = [len(ex.tokens) for ex in corpus.examples]
        assert min(lengths) >= 2
        assert max(lengths) <= 7
