"""Text normalization, n-gram extraction, and vocabulary freezing."""

import zlib

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyfind import featurizer as feat
from polyfind.errors import EmptyCorpus, ParseError


class TestNormalize:
    def test_lowercases_and_wraps_sentence(self):
        assert feat.normalize("Hello World") == ["<s>", "hello", "world", "</s>"]

    def test_masks_digits_in_long_numbers(self):
        assert feat.normalize("call 5551234567") == [
            "<s>", "call", "##########", "</s>"]

    def test_short_numbers_not_masked(self):
        assert feat.normalize("room 1234") == ["<s>", "room", "1234", "</s>"]

    def test_long_token_becomes_wildcard(self):
        assert feat.normalize("a" * 17) == ["<s>", "LONGWORD", "</s>"]

    def test_sixteen_chars_kept(self):
        assert feat.normalize("a" * 16) == ["<s>", "a" * 16, "</s>"]

    def test_empty_input(self):
        assert feat.normalize("") == []
        assert feat.normalize("   ") == []

    def test_two_sentences_each_wrapped(self):
        tokens = feat.normalize("Good pie. Bad tea!")
        assert tokens == ["<s>", "good", "pie", ".", "</s>",
                          "<s>", "bad", "tea", "!", "</s>"]

    def test_punctuation_split_off(self):
        assert feat.normalize("hello, world") == [
            "<s>", "hello", ",", "world", "</s>"]

    def test_masked_number_longer_than_limit_is_wildcard(self):
        # 20 digits: masking keeps length 20 > 16, so the wildcard wins.
        assert feat.normalize("9" * 20) == ["<s>", "LONGWORD", "</s>"]

    @given(st.text(max_size=80))
    @settings(max_examples=200, deadline=None)
    def test_token_length_bound(self, text):
        for tok in feat.normalize(text):
            if tok not in (feat.SENT_START, feat.SENT_END, feat.LONGWORD):
                assert len(tok) <= feat.MAX_TOKEN_LEN

    @given(st.text(alphabet=st.characters(whitelist_categories=("Ll", "Nd", "Zs", "Po")),
                   max_size=60))
    @settings(max_examples=200, deadline=None)
    def test_mask_count_matches_digit_heavy_tokens(self, text):
        # Tokens that stay within the length limit after masking carry one
        # '#' per original digit.
        masked = [t for t in feat.normalize(text) if "#" in t]
        for tok in masked:
            assert tok.count("#") >= feat.DIGIT_MASK_THRESHOLD or \
                any(not ch.isdigit() for ch in tok)

    @given(st.text(max_size=60))
    @settings(max_examples=150, deadline=None)
    def test_idempotent_on_own_output(self, text):
        tokens = feat.normalize(text)
        content = [t for t in tokens
                   if t not in (feat.SENT_START, feat.SENT_END)]
        again = feat.normalize(" ".join(content))
        content_again = [t for t in again
                         if t not in (feat.SENT_START, feat.SENT_END)]
        assert content_again == content


class TestExtract:
    def test_bigrams_are_adjacent_pairs(self, words_vocab):
        tokens = ["<s>", "hello", "world", "</s>"]
        fs = feat.extract(tokens, words_vocab)
        assert len(fs.unigrams) == 4
        assert len(fs.bigrams) == 3

    def test_oov_bucket_is_stable(self, words_vocab):
        a = words_vocab.unigram_id("zxqv")
        b = words_vocab.unigram_id("zxqv")
        assert a == b
        assert 0 <= a <= 50000

    def test_no_bigram_crosses_sentence_boundary(self, words_vocab):
        tokens = feat.normalize("Good pie. Bad tea.")
        fs = feat.extract(tokens, words_vocab)
        # 2 sentences x 5 tokens -> 4 bigrams each; none spanning the gap.
        assert len(fs.bigrams) == 8

    def test_ids_within_legal_range(self, words_vocab):
        fs = feat.featurize("completely unseen gibberish qqqq", words_vocab)
        legal_max_u = feat.VOCAB_ID_BASE + words_vocab.n_unigrams
        legal_max_b = feat.VOCAB_ID_BASE + words_vocab.n_bigrams
        assert all(0 <= i < legal_max_u for i in fs.unigrams)
        assert all(0 <= i < legal_max_b for i in fs.bigrams)

    def test_merge_features_keeps_boundaries(self, words_vocab):
        a = feat.featurize("good pie", words_vocab)
        b = feat.featurize("bad tea", words_vocab)
        merged = feat.merge_features([a, b])
        assert merged.unigrams == a.unigrams + b.unigrams
        assert merged.bigrams == a.bigrams + b.bigrams


class TestBuildVocab:
    def test_min_count_keeps_repeated_tokens(self):
        vocab = feat.build_vocab(["a b"] * 10, min_count=10)
        assert set(vocab.unigram_ids) == {"<s>", "a", "b", "</s>"}
        assert ("a", "b") in vocab.bigram_ids

    def test_boundary_tokens_survive_high_min_count(self):
        vocab = feat.build_vocab(["a b"] * 10, min_count=11)
        assert "<s>" in vocab.unigram_ids
        assert "</s>" in vocab.unigram_ids
        assert "a" not in vocab.unigram_ids

    def test_max_bigrams_keeps_most_frequent(self):
        corpus = ["x y"] * 12 + ["y z"] * 11
        vocab = feat.build_vocab(corpus, min_count=1, max_bigrams=1)
        kept = [pair for pair in vocab.bigram_ids
                if "<s>" not in pair and "</s>" not in pair]
        # Boundary bigrams tie at the top; the content bigram kept most
        # frequently is (x, y).
        assert vocab.n_bigrams == 1

    def test_empty_corpus_raises(self):
        with pytest.raises(EmptyCorpus):
            feat.build_vocab(["", "   "], min_count=1)

    def test_ids_dense_and_disjoint_from_oov(self):
        vocab = feat.build_vocab(["a b c d"] * 10, min_count=1)
        uids = sorted(i for i, _ in vocab.unigram_ids.values())
        assert uids == list(range(feat.VOCAB_ID_BASE,
                                  feat.VOCAB_ID_BASE + len(uids)))

    def test_deterministic_given_same_corpus(self):
        c = ["the quick brown fox", "jumps over the lazy dog"] * 5
        v1 = feat.build_vocab(c, min_count=2)
        v2 = feat.build_vocab(c, min_count=2)
        assert v1.unigram_ids == v2.unigram_ids
        assert v1.bigram_ids == v2.bigram_ids
        assert v1.checksum() == v2.checksum()


class TestVocabFile:
    def test_round_trip(self, tmp_path, words_vocab):
        path = tmp_path / "vocab.txt"
        feat.save_vocab(words_vocab, path)
        loaded = feat.load_vocab(path)
        assert loaded.unigram_ids == words_vocab.unigram_ids
        assert loaded.bigram_ids == words_vocab.bigram_ids
        assert loaded.checksum() == words_vocab.checksum()

    def test_header_line(self, tmp_path, words_vocab):
        path = tmp_path / "vocab.txt"
        feat.save_vocab(words_vocab, path)
        first = path.read_text(encoding="utf-8").splitlines()[0]
        assert first == "#polyfind-vocab v1"

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("#other v9\n", encoding="utf-8")
        with pytest.raises(ParseError):
            feat.load_vocab(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("#polyfind-vocab v1\nU\tonly-two\n", encoding="utf-8")
        with pytest.raises(ParseError) as err:
            feat.load_vocab(path)
        assert err.value.line == 2
