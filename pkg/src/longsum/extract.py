"""Extractive stage: rank input paragraphs per article and assemble the
raw text handed to the abstractive model.

Five rankers: identity (input order), tf-idf against the article title,
TextRank over a word-overlap paragraph graph, SumBasic with the
squared-probability update, and a cheating ranker scoring bigram recall
against the target lead. Ties always break to input order so rankings
are deterministic.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import ArticleExample
from .errors import DataError
from .words import bigram_set, word_tokens

METHODS = ("identity", "tfidf", "textrank", "sumbasic", "cheating")

_PARAGRAPH_SPLIT = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class Paragraph:
    doc_id: str
    index: int
    text: str


@dataclass
class Ranking:
    method: str
    items: list[tuple[Paragraph, float]]

    @property
    def paragraphs(self) -> list[Paragraph]:
        return [p for p, _ in self.items]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]


def split_paragraphs(example: ArticleExample) -> list[Paragraph]:
    """Paragraphs are maximal runs of text between blank lines, in
    document order across citations then search results."""
    paragraphs = []
    for doc in example.input_documents():
        index = 0
        for chunk in _PARAGRAPH_SPLIT.split(doc.text):
            text = chunk.strip()
            if not text:
                continue
            paragraphs.append(Paragraph(doc_id=doc.id, index=index, text=text))
            index += 1
    return paragraphs


def _sorted_ranking(method: str, paragraphs: list[Paragraph], scores: list[float]) -> Ranking:
    # stable sort on -score keeps input order among ties
    order = sorted(range(len(paragraphs)), key=lambda i: -scores[i])
    return Ranking(method, [(paragraphs[i], scores[i]) for i in order])


def rank_identity(paragraphs: list[Paragraph]) -> Ranking:
    """Input order, all scores zero."""
    return Ranking("identity", [(p, 0.0) for p in paragraphs])


def rank_tfidf(title: str, paragraphs: list[Paragraph]) -> Ranking:
    """Score each paragraph as the sum over title words of
    N_w * ln(N_d / N_dw), with paragraphs as the document pool.

    N_w is the word's count in the paragraph, N_d the paragraph count,
    N_dw the number of paragraphs containing the word; words absent
    from every paragraph contribute nothing.
    """
    if not paragraphs:
        raise DataError("rank_tfidf: no paragraphs")
    query = word_tokens(title)
    counts = [Counter(word_tokens(p.text)) for p in paragraphs]
    n_docs = len(paragraphs)
    doc_freq: Counter = Counter()
    for word in set(query):
        doc_freq[word] = sum(1 for c in counts if word in c)
    scores = []
    for c in counts:
        score = 0.0
        for word in query:
            if doc_freq[word] == 0:
                continue
            score += c[word] * math.log(n_docs / doc_freq[word])
        scores.append(score)
    return _sorted_ranking("tfidf", paragraphs, scores)


def textrank_similarity(a: list[str], b: list[str]) -> float:
    """Word-overlap similarity normalized by log paragraph lengths."""
    overlap = len(set(a) & set(b))
    return overlap / (math.log(2 + len(a)) + math.log(2 + len(b)))


def rank_textrank(
    paragraphs: list[Paragraph],
    damping: float = 0.85,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> Ranking:
    """Damped power iteration over the paragraph similarity graph;
    stationary scores are normalized to sum to one."""
    if not paragraphs:
        raise DataError("rank_textrank: no paragraphs")
    n = len(paragraphs)
    tokens = [word_tokens(p.text) for p in paragraphs]
    sim = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sim[i, j] = sim[j, i] = textrank_similarity(tokens[i], tokens[j])
    out_weight = sim.sum(axis=1)
    scores = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        incoming = np.zeros(n)
        for j in range(n):
            if out_weight[j] > 0:
                incoming += scores[j] * sim[j] / out_weight[j]
        updated = (1.0 - damping) / n + damping * incoming
        if np.abs(updated - scores).sum() < tol:
            scores = updated
            break
        scores = updated
    scores = scores / scores.sum()
    return _sorted_ranking("textrank", paragraphs, [float(s) for s in scores])


def rank_sumbasic(paragraphs: list[Paragraph]) -> Ranking:
    """Greedy selection by mean word probability with the squared
    re-weighting of already-covered words; ranking is selection order
    and each score is the unit score at selection time."""
    if not paragraphs:
        raise DataError("rank_sumbasic: no paragraphs")
    tokens = [word_tokens(p.text) for p in paragraphs]
    counts: Counter = Counter()
    for toks in tokens:
        counts.update(toks)
    total = sum(counts.values())
    prob = {w: c / total for w, c in counts.items()} if total else {}

    remaining = list(range(len(paragraphs)))
    items: list[tuple[Paragraph, float]] = []
    while remaining:
        best_i = None
        best_score = -1.0
        for i in remaining:
            toks = tokens[i]
            score = sum(prob[w] for w in toks) / len(toks) if toks else 0.0
            if score > best_score:
                best_i, best_score = i, score
        assert best_i is not None
        items.append((paragraphs[best_i], best_score))
        remaining.remove(best_i)
        for w in set(tokens[best_i]):
            prob[w] = prob[w] ** 2
    return Ranking("sumbasic", items)


def rank_cheating(paragraphs: list[Paragraph], target_lead: str) -> Ranking:
    """Rank by recall of the lead's bigrams: |bigrams(p) n bigrams(lead)|
    / |bigrams(lead)|."""
    lead_bigrams = bigram_set(target_lead)
    if not lead_bigrams:
        raise DataError("rank_cheating: target lead has fewer than 2 word tokens")
    scores = [
        len(bigram_set(p.text) & lead_bigrams) / len(lead_bigrams) for p in paragraphs
    ]
    return _sorted_ranking("cheating", paragraphs, scores)


def rank(method: str, example: ArticleExample, paragraphs: list[Paragraph] | None = None) -> Ranking:
    """Dispatch by method name on one example's paragraph pool."""
    if paragraphs is None:
        paragraphs = split_paragraphs(example)
    if method == "identity":
        return rank_identity(paragraphs)
    if method == "tfidf":
        return rank_tfidf(example.title, paragraphs)
    if method == "textrank":
        return rank_textrank(paragraphs)
    if method == "sumbasic":
        return rank_sumbasic(paragraphs)
    if method == "cheating":
        return rank_cheating(paragraphs, example.lead)
    raise DataError(f"unknown extraction method {method!r}")


def build_input_text(title: str, ranking: Ranking) -> str:
    """Title prefixed to the ranked paragraphs, newline-joined; token
    truncation happens later in token space."""
    parts = [title] + [p.text for p in ranking.paragraphs]
    return "\n".join(parts)


