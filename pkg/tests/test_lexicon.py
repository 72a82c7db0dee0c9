"""Similarity providers, keyword dictionaries, and word-pair scoring."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexgate.lexicon import (
    KeywordDictionary,
    LexiconError,
    SimilarityProvider,
    load_keyword_dictionary,
    load_similarity_lexicon,
    lookup_override,
    pair_key,
    word_similarity,
)

words = st.text(alphabet="abcdefgh", min_size=1, max_size=6)


def write(tmp_path, text, name="lex.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadLexicon:
    def test_symmetric_closure(self, tmp_path):
        p = load_similarity_lexicon(write(tmp_path, "earnings\ttotal_earnings\t0.8\n"))
        assert p.lookup("earnings", "total_earnings") == 0.8
        assert p.lookup("total_earnings", "earnings") == 0.8

    def test_empty_file(self, tmp_path):
        p = load_similarity_lexicon(write(tmp_path, ""))
        assert p.lookup("anything", "else") is None

    def test_score_out_of_range(self, tmp_path):
        with pytest.raises(LexiconError, match=":1"):
            load_similarity_lexicon(write(tmp_path, "a\tb\t1.5\n"))

    def test_malformed_line_number(self, tmp_path):
        with pytest.raises(LexiconError, match=":2"):
            load_similarity_lexicon(write(tmp_path, "a\tb\t0.5\nbroken line\n"))

    def test_non_numeric_score(self, tmp_path):
        with pytest.raises(LexiconError, match="not a number"):
            load_similarity_lexicon(write(tmp_path, "a\tb\thigh\n"))

    def test_comments_and_blank_lines(self, tmp_path):
        p = load_similarity_lexicon(write(tmp_path, "# header\n\na\tb\t0.4\n"))
        assert p.lookup("a", "b") == 0.4

    def test_conflicting_duplicates_last_wins(self, tmp_path):
        p = load_similarity_lexicon(write(tmp_path, "a\tb\t0.4\nb\ta\t0.6\n"))
        assert p.lookup("a", "b") == 0.6
        assert p.conflicts == 1

    def test_ascii_lowercasing(self, tmp_path):
        p = load_similarity_lexicon(write(tmp_path, "Earnings\tTotal\t0.5\n"))
        assert p.lookup("earnings", "total") == 0.5


class TestKeywordDictionary:
    def test_load_and_lookup(self, tmp_path):
        d = load_keyword_dictionary(write(tmp_path, "earnings\ttotal_earnings\t0\n"))
        assert lookup_override(d, "total_earnings", "earnings") == 0.0

    def test_score_one(self, tmp_path):
        d = load_keyword_dictionary(write(tmp_path, "receiving\tapplying\t1\n"))
        assert lookup_override(d, "receiving", "applying") == 1.0

    def test_fractional_rejected(self, tmp_path):
        with pytest.raises(LexiconError, match="exactly 0 or 1"):
            load_keyword_dictionary(write(tmp_path, "a\tb\t0.5\n"))

    def test_fractional_allowed_when_relaxed(self, tmp_path):
        d = load_keyword_dictionary(write(tmp_path, "a\tb\t0.5\n"), allow_fractional=True)
        assert lookup_override(d, "a", "b") == 0.5

    def test_domain_column(self, tmp_path):
        d = load_keyword_dictionary(write(tmp_path, "a\tb\t1\tfinance\n"))
        assert d.domain == "finance"

    def test_empty_dictionary_returns_absent(self):
        assert lookup_override(KeywordDictionary(), "a", "b") is None
        assert lookup_override(None, "a", "b") is None

    def test_with_entry_does_not_mutate(self):
        d = KeywordDictionary()
        d2 = d.with_entry("a", "b", 1.0)
        assert lookup_override(d, "a", "b") is None
        assert lookup_override(d2, "a", "b") == 1.0


def provider(entries, name="p"):
    return SimilarityProvider(name, {pair_key(a, b): s for (a, b), s in entries.items()})


class TestWordSimilarity:
    def test_two_provider_mean(self):
        ps = [provider({("x", "y"): 0.8}), provider({("x", "y"): 0.6})]
        out = word_similarity(ps, "x", "y")
        assert out.score == pytest.approx(0.7)
        assert out.source == "provider-average"

    def test_same_sentence_is_zero(self):
        ps = [provider({("x", "y"): 0.9})]
        out = word_similarity(ps, "x", "y", same_sentence=True)
        assert out.score == 0.0
        assert out.source == "same-sentence-zero"

    def test_unknown_pair_zero(self):
        out = word_similarity([provider({})], "x", "y")
        assert out.score == 0.0
        assert out.source == "unknown-zero"

    def test_missing_policy_zero_divides_by_provider_count(self):
        ps = [provider({("x", "y"): 0.8}), provider({})]
        assert word_similarity(ps, "x", "y").score == pytest.approx(0.4)

    def test_missing_policy_skip_averages_known(self):
        ps = [provider({("x", "y"): 0.8}), provider({})]
        out = word_similarity(ps, "x", "y", missing_policy="skip")
        assert out.score == pytest.approx(0.8)

    def test_empty_providers_rejected(self):
        with pytest.raises(ValueError):
            word_similarity([], "x", "y")

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            word_similarity([provider({})], "x", "y", missing_policy="maybe")

    @given(words, words, st.floats(0, 1), st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_symmetry_and_range(self, a, b, s1, s2):
        ps = [provider({(a, b): round(s1, 6)}), provider({(a, b): round(s2, 6)})]
        ab = word_similarity(ps, a, b)
        ba = word_similarity(ps, b, a)
        assert ab.score == ba.score
        assert 0.0 <= ab.score <= 1.0

    def test_same_sentence_beats_providers_randomized(self):
        rng = np.random.default_rng(5)
        alphabet = "abcdefghij"
        for _ in range(1000):
            a = "".join(rng.choice(list(alphabet), size=3))
            b = "".join(rng.choice(list(alphabet), size=3))
            ps = [provider({(a, b): float(rng.random())})]
            assert word_similarity(ps, a, b, same_sentence=True).score == 0.0
