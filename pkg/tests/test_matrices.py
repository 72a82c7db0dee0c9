"""Segmentation, tokenization, and bias-matrix construction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexgate.lexicon import KeywordDictionary, SimilarityProvider, pair_key
from lexgate.matrices import (
    SEG_S1,
    SEG_S2,
    SEG_SPECIAL,
    Tokenizer,
    TokenizedPair,
    WordSpan,
    build_pair_matrices,
    build_word_matrix,
    cross_sentence_mask,
    derive_dissimilarity,
    expand_to_tokens,
    matrix_to_csv,
    segment,
    tokenize_pair,
)


def provider(entries, name="p"):
    return SimilarityProvider(name, {pair_key(a, b): s for (a, b), s in entries.items()})


class TestSegment:
    def test_longest_match_phrase(self):
        spans = segment("how to get a card", {"get a"})
        assert [w for w, _, _ in spans] == ["how", "to", "get a", "card"]

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            segment("", set())
        with pytest.raises(ValueError):
            segment("   ", set())

    def test_out_of_vocabulary_falls_back_to_whitespace(self):
        spans = segment("balance of producta", set())
        assert [w for w, _, _ in spans] == ["balance", "of", "producta"]

    def test_cjk_falls_back_to_single_characters(self):
        spans = segment("收益哪里看", set())
        assert [w for w, _, _ in spans] == ["收", "益", "哪", "里", "看"]

    def test_cjk_vocabulary_longest_match(self):
        spans = segment("总收益哪里看", {"总收益", "收益"})
        assert [w for w, _, _ in spans] == ["总收益", "哪", "里", "看"]

    def test_ascii_boundary_respected(self):
        # "card" must not match inside "cards"
        spans = segment("two cards", {"card"})
        assert [w for w, _, _ in spans] == ["two", "cards"]

    def test_longer_match_preferred(self):
        spans = segment("total earnings here", {"total earnings", "total"})
        assert [w for w, _, _ in spans][0] == "total earnings"

    def test_spans_cover_everything_but_whitespace(self):
        text = "how to get a social security card"
        spans = segment(text, {"social security card", "get"})
        covered = sorted((s, e) for _, s, e in spans)
        pos = 0
        for s, e in covered:
            assert text[pos:s].strip() == ""
            pos = e
        assert text[pos:].strip() == ""

    def test_case_normalized(self):
        spans = segment("How To GET a card", {"get"})
        assert [w for w, _, _ in spans] == ["how", "to", "get", "a", "card"]


class TestTokenizer:
    def test_known_word_single_token(self):
        tok = Tokenizer.build({"card", "get"})
        assert len(tok.encode_word("card")) == 1

    def test_phrase_word_multi_token(self):
        tok = Tokenizer.build({"social security", "card"})
        ids = tok.encode_word("social security")
        assert len(ids) == 2
        assert [tok.decode(i) for i in ids] == ["social", "security"]

    def test_unknown_word_maps_to_unk(self):
        tok = Tokenizer.build({"x"})
        ids = tok.encode_word("qq")
        assert [tok.decode(i) for i in ids] == ["[UNK]"]

    def test_unknown_phrase_pieces_map_to_unk_each(self):
        tok = Tokenizer.build({"x"})
        ids = tok.encode_word("qq rr")
        assert [tok.decode(i) for i in ids] == ["[UNK]", "[UNK]"]

    def test_vocab_order_deterministic(self):
        t1 = Tokenizer.build({"b", "a", "c"})
        t2 = Tokenizer.build({"c", "a", "b"})
        assert t1.tokens == t2.tokens

    def test_min_count_cutoff(self):
        counts = {"common": 10, "rare": 2}
        tok = Tokenizer.build_with_min_count(counts, min_count=5)
        assert "common" in tok.ids and "rare" not in tok.ids
        assert tok.encode_word("rare") == [tok.ids["[UNK]"]]


class TestTokenizedPair:
    def test_layout(self):
        tok = Tokenizer.build({"aa", "bb", "cc"})
        pair = tokenize_pair("aa bb", "cc", tok, {"aa", "bb", "cc"})
        assert pair.length == 6
        assert pair.l1 == 2 and pair.l2 == 1
        labels = list(pair.sentence_of)
        assert labels[0] == SEG_SPECIAL and labels[3] == SEG_SPECIAL and labels[5] == SEG_SPECIAL
        assert labels[1] == SEG_S1 and labels[4] == SEG_S2

    def test_span_validation(self):
        with pytest.raises(ValueError, match="contiguous"):
            TokenizedPair(
                np.array([0, 3, 1, 4, 1]),
                np.array([SEG_SPECIAL, SEG_S1, SEG_SPECIAL, SEG_S2, SEG_SPECIAL]),
                [WordSpan("x", 2, 3, SEG_S1)],
            )

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError, match="at least one token"):
            TokenizedPair(
                np.array([0, 3, 1, 1]),
                np.array([SEG_SPECIAL, SEG_S1, SEG_SPECIAL, SEG_SPECIAL]),
                [WordSpan("x", 1, 2, SEG_S1)],
            )


class TestWordMatrix:
    def test_one_word_sentences(self):
        tok = Tokenizer.build({"x", "y"})
        pair = tokenize_pair("x", "y", tok, {"x", "y"})
        m = build_word_matrix(pair, [provider({("x", "y"): 0.7})])
        np.testing.assert_allclose(m, [[0.0, 0.7], [0.7, 0.0]])

    def test_override_zero_wins(self):
        tok = Tokenizer.build({"x", "y"})
        pair = tokenize_pair("x", "y", tok, {"x", "y"})
        d = KeywordDictionary().with_entry("x", "y", 0.0)
        m = build_word_matrix(pair, [provider({("x", "y"): 0.7})], d)
        np.testing.assert_allclose(m, np.zeros((2, 2)))

    def test_override_one_wins(self):
        tok = Tokenizer.build({"x", "y"})
        pair = tokenize_pair("x", "y", tok, {"x", "y"})
        d = KeywordDictionary().with_entry("x", "y", 1.0)
        m = build_word_matrix(pair, [provider({("x", "y"): 0.7})], d)
        np.testing.assert_allclose(m, [[0.0, 1.0], [1.0, 0.0]])


class TestExpandToTokens:
    def _pair(self):
        # word a spans tokens 1-3 (3 tokens), word b spans 5-6 (2 tokens)
        return TokenizedPair(
            np.array([0, 3, 4, 5, 1, 6, 7, 1]),
            np.array(
                [SEG_SPECIAL, SEG_S1, SEG_S1, SEG_S1, SEG_SPECIAL, SEG_S2, SEG_S2, SEG_SPECIAL]
            ),
            [WordSpan("abc", 1, 4, SEG_S1), WordSpan("de", 5, 7, SEG_S2)],
        )

    def test_block_copy(self):
        pair = self._pair()
        word_m = np.array([[0.0, 0.9], [0.9, 0.0]])
        out = expand_to_tokens(word_m, pair)
        np.testing.assert_allclose(out[1:4, 5:7], 0.9)
        np.testing.assert_allclose(out[5:7, 1:4], 0.9)
        assert out[0].sum() == 0 and out[:, 0].sum() == 0
        assert out[4].sum() == 0 and out[7].sum() == 0

    def test_zero_matrix(self):
        pair = self._pair()
        out = expand_to_tokens(np.zeros((2, 2)), pair)
        assert not out.any()

    def test_single_token_words_identity(self):
        tok = Tokenizer.build({"x", "y"})
        pair = tokenize_pair("x", "y", tok, {"x", "y"})
        word_m = np.array([[0.0, 0.4], [0.4, 0.0]])
        out = expand_to_tokens(word_m, pair)
        assert out[1, 3] == 0.4 and out[3, 1] == 0.4
        assert out.sum() == pytest.approx(0.8)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="word matrix shape"):
            expand_to_tokens(np.zeros((3, 3)), self._pair())


class TestDeriveDissimilarity:
    def test_complement(self):
        cross = np.array([[0.0, 1.0], [1.0, 0.0]])
        sim = np.array([[0.0, 0.7], [0.7, 0.0]])
        out = derive_dissimilarity(sim, cross)
        np.testing.assert_allclose(out, [[0.0, 0.3], [0.3, 0.0]])

    def test_within_sentence_stays_zero(self):
        cross = np.zeros((2, 2))
        out = derive_dissimilarity(np.zeros((2, 2)), cross)
        assert not out.any()

    def test_unknown_words_complement_to_one(self):
        cross = np.array([[0.0, 1.0], [1.0, 0.0]])
        out = derive_dissimilarity(np.zeros((2, 2)), cross)
        np.testing.assert_allclose(out, cross)

    def test_out_of_range_rejected(self):
        cross = np.ones((1, 1))
        with pytest.raises(ValueError, match="outside"):
            derive_dissimilarity(np.array([[1.2]]), cross)

    def test_nonzero_off_mask_rejected(self):
        cross = np.zeros((2, 2))
        with pytest.raises(ValueError, match="off the cross"):
            derive_dissimilarity(np.array([[0.0, 0.5], [0.0, 0.0]]), cross)


class TestBuildPairMatrices:
    def test_identical_words_full_similarity(self):
        p = provider({("w", "w"): 1.0})
        pair, bias = build_pair_matrices("w", "w", [p])
        assert bias.sim[1, 3] == 1.0 and bias.dissim[1, 3] == 0.0

    def test_no_coverage_dissim_equals_mask(self):
        pair, bias = build_pair_matrices("aa bb", "cc", [provider({})])
        assert not bias.sim.any()
        np.testing.assert_array_equal(bias.dissim, bias.cross_mask)

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            build_pair_matrices("", "x", [provider({})])

    def test_override_locality(self):
        p = provider({("x", "y"): 0.7, ("u", "v"): 0.6})
        base_pair, base = build_pair_matrices("x u", "y v", [p])
        d = KeywordDictionary().with_entry("x", "y", 1.0)
        _, over = build_pair_matrices("x u", "y v", [p], d)
        diff = np.argwhere(base.sim != over.sim)
        # x is token 1, y is token 4: only those two cells change
        assert sorted(map(tuple, diff)) == [(1, 4), (4, 1)]

    def test_cross_mask_structure(self):
        pair, bias = build_pair_matrices("aa bb", "cc dd", [provider({})])
        cross = cross_sentence_mask(pair)
        np.testing.assert_array_equal(bias.cross_mask, cross)
        assert cross.sum() == 2 * pair.l1 * pair.l2
        non_special = pair.l1 + pair.l2
        assert pair.length == non_special + 3

    def test_multi_occurrence_override(self):
        # the keyword appears twice in s1: both blocks must change
        p = provider({("x", "y"): 0.5})
        d = KeywordDictionary().with_entry("x", "y", 1.0)
        _, bias = build_pair_matrices("x and x", "y", [p], d)
        positions = [i for i in range(bias.sim.shape[0]) if bias.sim[i].max() == 1.0]
        assert len(positions) >= 2


@st.composite
def random_pair_case(draw):
    alphabet = "abcdefgh"
    n1 = draw(st.integers(1, 4))
    n2 = draw(st.integers(1, 4))
    mk = lambda: draw(st.text(alphabet=alphabet, min_size=1, max_size=4))
    s1 = [mk() for _ in range(n1)]
    s2 = [mk() for _ in range(n2)]
    entries = {}
    for a in s1:
        for b in s2:
            if draw(st.booleans()):
                entries[pair_key(a, b)] = round(draw(st.floats(0, 1)), 6)
    return " ".join(s1), " ".join(s2), SimilarityProvider("h", entries)


class TestMatrixInvariants:
    @given(random_pair_case())
    @settings(max_examples=120, deadline=None)
    def test_structural_invariants(self, case):
        s1, s2, prov = case
        pair, bias = build_pair_matrices(s1, s2, [prov])
        assert np.array_equal(bias.sim + bias.dissim, bias.cross_mask)
        assert np.all(bias.sim >= 0) and np.all(bias.sim <= 1)
        assert np.all(bias.dissim >= 0) and np.all(bias.dissim <= 1)
        assert not bias.sim[bias.cross_mask == 0].any()
        assert not bias.dissim[bias.cross_mask == 0].any()
        np.testing.assert_array_equal(bias.sim, bias.sim.T)
        # word-block constancy
        for sa in pair.word_spans:
            for sb in pair.word_spans:
                block = bias.sim[sa.start : sa.end, sb.start : sb.end]
                assert block.min() == block.max()


class TestCsvDump:
    def test_headers_and_values(self):
        p = provider({("x", "y"): 0.7})
        pair, bias = build_pair_matrices("x", "y", [p])
        tok = Tokenizer.build({"x", "y"})
        text = matrix_to_csv(bias.sim, pair, tok)
        lines = text.strip().split("\n")
        assert lines[0] == ",[CLS],x,[SEP],y,[SEP]"
        assert lines[1].startswith("[CLS],0,")
        assert "0.7" in lines[2]
