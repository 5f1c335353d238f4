"""Shared word-level tokenization and n-gram helpers.

One rule for every word-based computation in the package (clone
detection, amenability, extractive rankers, ROUGE): lowercase, split on
Unicode whitespace and punctuation, no stemming. Tokens are maximal
runs of word characters; underscores count as punctuation.
"""

from __future__ import annotations

import re

_WORD_RE = re.compile(r"[^\W_]+", re.UNICODE)


def word_tokens(text: str) -> list[str]:
    """Lowercased word tokens of ``text``."""
    return _WORD_RE.findall(text.lower())


def unigram_set(text: str) -> set[str]:
    """Distinct word tokens (types, not counts)."""
    return set(word_tokens(text))


def ngrams(tokens: list[str], n: int) -> list[tuple[str, ...]]:
    """All order-preserving n-grams of a token list."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def bigram_set(text: str) -> set:
    """Distinct word bigrams of ``text``."""
    return set(ngrams(word_tokens(text), 2))
