"""Sentence-pair tokenization and similarity/dissimilarity matrix building.

Pipeline: segment both sentences into words (greedy longest match against the
lexicon vocabulary), tokenize to ``[CLS] s1 [SEP] s2 [SEP]``, score every
cross-sentence word pair through overrides/providers, copy word scores into
token-level blocks, and derive the complement matrix. Special-token rows and
columns stay zero in both matrices so those positions receive no correction.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .lexicon import (
    SOURCE_OVERRIDE,
    WordSimScore,
    lookup_override,
    normalize_word,
    word_similarity,
)

SEG_SPECIAL = 0
SEG_S1 = 1
SEG_S2 = 2

CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
UNK_TOKEN = "[UNK]"


def _is_cjk(ch):
    return (
        "㐀" <= ch <= "鿿"
        or "豈" <= ch <= "﫿"
        or "぀" <= ch <= "ヿ"
    )


def _is_word_char(ch):
    return ch.isascii() and (ch.isalnum() or ch == "_")


def segment(sentence, vocabulary):
    """Greedy left-to-right longest-match segmentation into word spans.

    ``vocabulary`` entries may contain internal spaces (multi-word keywords);
    ASCII matches must align to word boundaries. Unmatched spans fall back to
    single characters for CJK and whitespace-delimited runs otherwise.

    Returns a list of (word, char_start, char_end) into the normalized
    sentence; the text outside the spans is whitespace only.
    """
    text = normalize_word(sentence)
    if not text:
        raise ValueError("cannot segment an empty sentence")
    by_first = {}
    for entry in vocabulary:
        entry = normalize_word(entry)
        if entry:
            by_first.setdefault(entry[0], []).append(entry)
    for entries in by_first.values():
        entries.sort(key=len, reverse=True)

    spans = []
    i = 0
    n = len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        match = None
        for entry in by_first.get(text[i], ()):
            end = i + len(entry)
            if end > n or text[i:end] != entry:
                continue
            left_ok = i == 0 or not (_is_word_char(text[i - 1]) and _is_word_char(entry[0]))
            right_ok = end == n or not (_is_word_char(entry[-1]) and _is_word_char(text[end]))
            if left_ok and right_ok:
                match = entry
                break
        if match is not None:
            spans.append((match, i, i + len(match)))
            i += len(match)
        elif _is_cjk(text[i]):
            spans.append((text[i], i, i + 1))
            i += 1
        else:
            j = i
            while j < n and not text[j].isspace() and not _is_cjk(text[j]):
                j += 1
            spans.append((text[i:j], i, j))
            i = j
    return spans


def segmentation_vocabulary(providers, kw_dict=None):
    """Words known to any provider or dictionary; guarantees keywords segment as units."""
    vocab = set()
    for provider in providers:
        vocab |= provider.words()
    if kw_dict is not None:
        vocab |= kw_dict.words()
    return vocab


class Tokenizer:
    """String-to-id mapping with multi-token words.

    A word is split on whitespace into pieces; a piece found in the vocabulary
    is one token, anything else is ``[UNK]``. Phrase entries therefore become
    multi-token words. Ids are stable under save/load.
    """

    def __init__(self, tokens):
        self.tokens = list(tokens)
        self.ids = {tok: i for i, tok in enumerate(self.tokens)}
        for special in (CLS_TOKEN, SEP_TOKEN, UNK_TOKEN):
            if special not in self.ids:
                raise ValueError(f"tokenizer vocabulary missing {special}")

    @classmethod
    def build(cls, words):
        """Deterministic vocabulary over normalized words and their pieces."""
        pieces = set()
        for word in words:
            for piece in normalize_word(word).split():
                if piece:
                    pieces.add(piece)
        return cls([CLS_TOKEN, SEP_TOKEN, UNK_TOKEN] + sorted(pieces))

    @classmethod
    def build_with_min_count(cls, word_counts, min_count=1):
        """Vocabulary restricted to pieces seen at least ``min_count`` times.

        Rare words fall to ``[UNK]``, which keeps the encoder from memorising
        them and leaves the external matrices as their only signal path; the
        same thing happens in deployment when domain keywords are absent from
        a fixed encoder vocabulary.
        """
        counts = {}
        for word, n in word_counts.items():
            for piece in normalize_word(word).split():
                if piece:
                    counts[piece] = counts.get(piece, 0) + n
        kept = sorted(p for p, n in counts.items() if n >= min_count)
        return cls([CLS_TOKEN, SEP_TOKEN, UNK_TOKEN] + kept)

    @property
    def vocab_size(self):
        return len(self.tokens)

    @property
    def cls_id(self):
        return self.ids[CLS_TOKEN]

    @property
    def sep_id(self):
        return self.ids[SEP_TOKEN]

    def encode_word(self, word):
        unk = self.ids[UNK_TOKEN]
        out = [
            self.ids.get(piece, unk)
            for piece in normalize_word(word).split()
            if piece
        ]
        return out or [unk]

    def decode(self, token_id):
        return self.tokens[token_id]


@dataclass
class WordSpan:
    word: str
    start: int  # first token position (inclusive)
    end: int  # last token position (exclusive)
    sentence: int  # SEG_S1 or SEG_S2


@dataclass
class TokenizedPair:
    """A sentence pair laid out as [CLS] s1 [SEP] s2 [SEP] in token ids."""

    token_ids: np.ndarray
    sentence_of: np.ndarray  # per-position SEG_* label
    word_spans: list = field(default_factory=list)

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.intp)
        self.sentence_of = np.asarray(self.sentence_of, dtype=np.int8)
        if self.token_ids.shape != self.sentence_of.shape:
            raise ValueError("token_ids and sentence_of lengths differ")
        if self.l1 < 1 or self.l2 < 1:
            raise ValueError("both sentences must contribute at least one token")
        covered = sorted(
            (s.start, s.end) for s in self.word_spans
        )
        pos = 1  # [CLS] at 0
        for start, end in covered:
            expect = pos if self.sentence_of[pos] != SEG_SPECIAL else pos + 1
            if start != expect or end <= start:
                raise ValueError("word spans must be contiguous and non-overlapping")
            pos = end
        non_special = int(np.sum(self.sentence_of != SEG_SPECIAL))
        if sum(s.end - s.start for s in self.word_spans) != non_special:
            raise ValueError("word spans must cover all non-special positions")

    @property
    def length(self):
        return int(self.token_ids.shape[0])

    @property
    def l1(self):
        return int(np.sum(self.sentence_of == SEG_S1))

    @property
    def l2(self):
        return int(np.sum(self.sentence_of == SEG_S2))


@dataclass
class BiasMatrices:
    """Token-level similarity matrix, its complement, and the cross-sentence mask.

    Invariants (validated): values in [0, 1], zero off the cross mask, and
    sim + dissim == cross_mask exactly.
    """

    sim: np.ndarray
    dissim: np.ndarray
    cross_mask: np.ndarray

    def validate(self):
        for name, m in (("sim", self.sim), ("dissim", self.dissim)):
            if m.shape != self.cross_mask.shape:
                raise ValueError(f"{name} shape {m.shape} != mask {self.cross_mask.shape}")
            if np.any(m < 0.0) or np.any(m > 1.0):
                raise ValueError(f"{name} has values outside [0, 1]")
            if np.any(m[self.cross_mask == 0.0] != 0.0):
                raise ValueError(f"{name} is nonzero off the cross-sentence mask")
        if not np.array_equal(self.sim + self.dissim, self.cross_mask):
            raise ValueError("sim + dissim != cross_mask")
        return self

    @classmethod
    def zeros(cls, length):
        z = np.zeros((length, length))
        return cls(z, z.copy(), z.copy())


def tokenize_pair(s1, s2, tokenizer, seg_vocab):
    """Segment and tokenize both sentences into a TokenizedPair."""
    ids = [tokenizer.cls_id]
    seg = [SEG_SPECIAL]
    spans = []
    for sentence, label in ((s1, SEG_S1), (s2, SEG_S2)):
        for word, _, _ in segment(sentence, seg_vocab):
            token_ids = tokenizer.encode_word(word)
            spans.append(WordSpan(word, len(ids), len(ids) + len(token_ids), label))
            ids.extend(token_ids)
            seg.extend([label] * len(token_ids))
        ids.append(tokenizer.sep_id)
        seg.append(SEG_SPECIAL)
    return TokenizedPair(np.array(ids), np.array(seg), spans)


def cross_sentence_mask(pair):
    """1 on cells whose row and column lie in different sentences, else 0."""
    s = pair.sentence_of
    in_s1 = s == SEG_S1
    in_s2 = s == SEG_S2
    mask = np.outer(in_s1, in_s2) | np.outer(in_s2, in_s1)
    return mask.astype(np.float64)


def build_word_matrix(pair, providers, kw_dict=None, missing_policy="zero"):
    """Word-by-word score matrix over the pair's word spans.

    Cell (a, b) is the dictionary override when one exists, otherwise the
    provider average; same-sentence cells are 0.
    """
    n = len(pair.word_spans)
    out = np.zeros((n, n))
    for a in range(n):
        sa = pair.word_spans[a]
        for b in range(n):
            sb = pair.word_spans[b]
            if sa.sentence == sb.sentence:
                continue
            out[a, b] = score_word_pair(
                sa.word, sb.word, providers, kw_dict, missing_policy
            ).score
    return out


def score_word_pair(word_a, word_b, providers, kw_dict, missing_policy="zero"):
    """Override-first scoring of one cross-sentence word pair."""
    override = lookup_override(kw_dict, word_a, word_b)
    if override is not None:
        return WordSimScore(word_a, word_b, override, SOURCE_OVERRIDE)
    return word_similarity(providers, word_a, word_b, False, missing_policy)


def expand_to_tokens(word_matrix, pair):
    """Copy word-level scores into token-level blocks; specials stay zero."""
    n = len(pair.word_spans)
    if word_matrix.shape != (n, n):
        raise ValueError(
            f"word matrix shape {word_matrix.shape} does not match {n} word spans"
        )
    length = pair.length
    out = np.zeros((length, length))
    for a, sa in enumerate(pair.word_spans):
        for b, sb in enumerate(pair.word_spans):
            out[sa.start : sa.end, sb.start : sb.end] = word_matrix[a, b]
    return out


def derive_dissimilarity(sim, cross_mask):
    """Complement matrix: 1 - score on cross-sentence cells, 0 elsewhere."""
    if np.any(sim < 0.0) or np.any(sim > 1.0):
        raise ValueError("similarity matrix has values outside [0, 1]")
    if np.any(sim[cross_mask == 0.0] != 0.0):
        raise ValueError("similarity matrix is nonzero off the cross-sentence mask")
    return cross_mask - sim


def build_pair_matrices(
    s1,
    s2,
    providers,
    kw_dict=None,
    tokenizer=None,
    missing_policy="zero",
) -> tuple[TokenizedPair, BiasMatrices]:
    """Full pipeline from raw sentences to validated bias matrices.

    When no tokenizer is supplied an ephemeral one is built from the two
    sentences plus the lexicon vocabulary.
    """
    if not s1.strip() or not s2.strip():
        raise ValueError("both sentences must be non-empty")
    seg_vocab = segmentation_vocabulary(providers, kw_dict)
    if tokenizer is None:
        words = [w for sent in (s1, s2) for w, _, _ in segment(sent, seg_vocab)]
        tokenizer = Tokenizer.build(set(words) | seg_vocab)
    pair = tokenize_pair(s1, s2, tokenizer, seg_vocab)
    word_matrix = build_word_matrix(pair, providers, kw_dict, missing_policy)
    sim = expand_to_tokens(word_matrix, pair)
    cross = cross_sentence_mask(pair)
    dissim = derive_dissimilarity(sim, cross)
    return pair, BiasMatrices(sim, dissim, cross).validate()


def matrix_to_csv(matrix, pair, tokenizer):
    """Render a token-level matrix as CSV with token labels on both axes."""
    labels = [tokenizer.decode(t) for t in pair.token_ids]
    lines = ["," + ",".join(labels)]
    for label, row in zip(labels, matrix):
        lines.append(label + "," + ",".join(f"{v:.6g}" for v in row))
    return "\n".join(lines) + "\n"
