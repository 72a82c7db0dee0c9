"""Word-pair similarity providers and keyword-dictionary overrides.

Providers are file-backed symmetric maps from an unordered word pair to a
score in [0, 1]; two providers averaged is the default configuration. A
keyword dictionary holds inference-time overrides in {0, 1} that replace the
provider score for specific pairs without retraining anything.
"""

from dataclasses import dataclass, field
from typing import Optional

SOURCE_PROVIDER = "provider-average"
SOURCE_OVERRIDE = "override"
SOURCE_SAME_SENTENCE = "same-sentence-zero"
SOURCE_UNKNOWN = "unknown-zero"


class LexiconError(ValueError):
    """Malformed or out-of-range lexicon/dictionary content."""


def normalize_word(word):
    """ASCII-only lowercasing; other scripts pass through untouched."""
    return "".join(c.lower() if c.isascii() else c for c in word).strip()


def pair_key(word_a, word_b):
    a, b = normalize_word(word_a), normalize_word(word_b)
    return (a, b) if a <= b else (b, a)


@dataclass
class SimilarityProvider:
    """Symmetric word-pair scores in [0, 1], keyed by unordered pair."""

    name: str
    entries: dict = field(default_factory=dict)
    conflicts: int = 0

    def lookup(self, word_a, word_b) -> Optional[float]:
        return self.entries.get(pair_key(word_a, word_b))

    def words(self):
        seen = set()
        for a, b in self.entries:
            seen.add(a)
            seen.add(b)
        return seen


@dataclass
class KeywordDictionary:
    """Override scores for specific word pairs, 0 (dissimilar) or 1 (similar)."""

    entries: dict = field(default_factory=dict)
    domain: str = ""
    allow_fractional: bool = False

    def words(self):
        seen = set()
        for a, b in self.entries:
            seen.add(a)
            seen.add(b)
        return seen

    def with_entry(self, word_a, word_b, score):
        """A copy extended by one entry; the per-example override path."""
        merged = dict(self.entries)
        merged[pair_key(word_a, word_b)] = _validate_override_score(
            score, self.allow_fractional
        )
        return KeywordDictionary(merged, self.domain, self.allow_fractional)


@dataclass
class WordSimScore:
    word_a: str
    word_b: str
    score: float
    source: str


def _validate_override_score(score, allow_fractional):
    score = float(score)
    if allow_fractional:
        if not 0.0 <= score <= 1.0:
            raise LexiconError(f"override score {score} outside [0, 1]")
        return score
    if score not in (0.0, 1.0):
        raise LexiconError(f"override score {score} must be exactly 0 or 1")
    return score


def _parse_tsv(path, min_cols, max_cols):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if not (min_cols <= len(cols) <= max_cols):
                raise LexiconError(
                    f"{path}:{lineno}: expected {min_cols}-{max_cols} tab-separated "
                    f"columns, got {len(cols)}"
                )
            try:
                score = float(cols[2])
            except ValueError:
                raise LexiconError(f"{path}:{lineno}: score {cols[2]!r} is not a number")
            yield lineno, cols, score


def load_similarity_lexicon(path, name=None) -> SimilarityProvider:
    """Load a provider from a TSV file of ``word_a<TAB>word_b<TAB>score`` lines.

    Lines starting with ``#`` are comments. Scores must lie in [0, 1].
    Conflicting duplicate pairs keep the last value; the count of conflicts is
    recorded on the provider.
    """
    provider = SimilarityProvider(name=name or str(path))
    for lineno, cols, score in _parse_tsv(path, 3, 3):
        if not 0.0 <= score <= 1.0:
            raise LexiconError(f"{path}:{lineno}: score {score} outside [0, 1]")
        key = pair_key(cols[0], cols[1])
        if key in provider.entries and provider.entries[key] != score:
            provider.conflicts += 1
        provider.entries[key] = score
    return provider


def load_keyword_dictionary(path, allow_fractional=False) -> KeywordDictionary:
    """Load overrides from a TSV file; optional 4th column is a domain tag."""
    entries = {}
    domains = set()
    for lineno, cols, score in _parse_tsv(path, 3, 4):
        try:
            entries[pair_key(cols[0], cols[1])] = _validate_override_score(
                score, allow_fractional
            )
        except LexiconError as err:
            raise LexiconError(f"{path}:{lineno}: {err}") from None
        if len(cols) == 4 and cols[3].strip():
            domains.add(cols[3].strip())
    return KeywordDictionary(
        entries, domain=",".join(sorted(domains)), allow_fractional=allow_fractional
    )


def word_similarity(
    providers, word_a, word_b, same_sentence=False, missing_policy="zero"
) -> WordSimScore:
    """Score a word pair by averaging the configured providers.

    Words from the same sentence score 0 unconditionally. Under
    ``missing_policy="zero"`` a provider lacking the pair contributes 0 to the
    mean (the divisor stays the provider count); under ``"skip"`` only
    providers that know the pair are averaged. A pair unknown to every
    provider scores 0 with source ``unknown-zero``.
    """
    if not providers:
        raise ValueError("at least one similarity provider is required")
    if missing_policy not in ("zero", "skip"):
        raise ValueError(f"unknown missing_policy {missing_policy!r}")
    if same_sentence:
        return WordSimScore(word_a, word_b, 0.0, SOURCE_SAME_SENTENCE)
    hits = [p.lookup(word_a, word_b) for p in providers]
    known = [h for h in hits if h is not None]
    if not known:
        return WordSimScore(word_a, word_b, 0.0, SOURCE_UNKNOWN)
    if missing_policy == "zero":
        score = sum(known) / len(providers)
    else:
        score = sum(known) / len(known)
    return WordSimScore(word_a, word_b, score, SOURCE_PROVIDER)


def lookup_override(kw_dict, word_a, word_b) -> Optional[float]:
    """The stored override for a pair, or None when absent."""
    if kw_dict is None:
        return None
    return kw_dict.entries.get(pair_key(word_a, word_b))
