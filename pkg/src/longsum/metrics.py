"""Evaluation metrics: clipped n-gram ROUGE, LCS-based ROUGE-L, and
per-wordpiece perplexity.

ROUGE preprocessing is pinned to the shared word tokenizer (lowercase,
no stemming, no stopword removal) so scores are reproducible across the
corpus and evaluation stages.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .words import ngrams, word_tokens


@dataclass(frozen=True)
class RougeScore:
    recall: float
    precision: float
    f1: float


def _f1(recall: float, precision: float) -> float:
    if recall + precision == 0.0:
        return 0.0
    return 2.0 * recall * precision / (recall + precision)


def rouge_n(candidate: str, reference: str, n: int) -> RougeScore:
    """Clipped n-gram overlap between candidate and reference.

    recall = overlap / reference n-grams, precision = overlap /
    candidate n-grams. A candidate with fewer than n tokens has zero
    precision by convention; a reference with fewer than n tokens is an
    error.
    """
    ref_grams = Counter(ngrams(word_tokens(reference), n))
    if not ref_grams:
        raise ValueError(f"reference has fewer than {n} word tokens")
    cand_grams = Counter(ngrams(word_tokens(candidate), n))
    overlap = sum(min(cnt, ref_grams[g]) for g, cnt in cand_grams.items())
    n_ref = sum(ref_grams.values())
    n_cand = sum(cand_grams.values())
    recall = overlap / n_ref
    precision = overlap / n_cand if n_cand else 0.0
    return RougeScore(recall, precision, _f1(recall, precision))


def _lcs_len(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length via dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate: str, reference: str) -> RougeScore:
    """LCS-based ROUGE over word tokens; f1 is the harmonic mean of
    LCS recall and LCS precision."""
    cand = word_tokens(candidate)
    ref = word_tokens(reference)
    if not cand or not ref:
        raise ValueError("rouge_l requires non-empty candidate and reference")
    lcs = _lcs_len(cand, ref)
    recall = lcs / len(ref)
    precision = lcs / len(cand)
    return RougeScore(recall, precision, _f1(recall, precision))


def scope_mask(seq_len: int, n_input: int, scope: str) -> np.ndarray:
    """Boolean mask over the seq_len - 1 next-token predictions of a
    combined sequence.

    ``all_positions`` scores every prediction (input side included, as
    during training); ``output_only`` scores only predictions of tokens
    after the separator, i.e. prediction sources at index >= n_input.
    The two masks differ exactly on the first n_input positions.
    """
    if scope not in ("all_positions", "output_only"):
        raise ValueError(f"unknown scope {scope!r}")
    mask = np.ones(seq_len - 1, dtype=bool)
    if scope == "output_only":
        mask[:n_input] = False
    return mask


@dataclass(frozen=True)
class PerplexityReport:
    log_perplexity: float
    perplexity: float
    n_tokens: int


def log_perplexity(model, dataset, scope: str = "output_only") -> PerplexityReport:
    """Mean negative log-likelihood in nats per scored wordpiece, and
    its exponential.

    ``dataset`` is an iterable of (token ids, n_input) pairs; the model
    must expose ``loss(ids, n_input, scope=...)`` returning the mean
    NLL over the scoped positions. With scope ``all_positions`` this is
    by construction the model's training loss in evaluation mode.
    """
    total_nll = 0.0
    total_tokens = 0
    for ids, n_input in dataset:
        mask = scope_mask(len(ids), n_input, scope)
        n_scored = int(mask.sum())
        if n_scored == 0:
            continue
        mean_nll = float(model.loss(ids, n_input, scope=scope).values)
        total_nll += mean_nll * n_scored
        total_tokens += n_scored
    if total_tokens == 0:
        raise DataError("log_perplexity: empty dataset (no scored positions)")
    mean = total_nll / total_tokens
    return PerplexityReport(mean, math.exp(mean), total_tokens)


@dataclass
class EvalRow:
    example_id: str
    rouge1: RougeScore
    rouge_l_f1: float
    nll_nats: float | None = None
    n_scored_tokens: int | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    @property
    def mean_rouge1_recall(self) -> float:
        return float(np.mean([r.rouge1.recall for r in self.rows]))

    @property
    def mean_rouge1_f1(self) -> float:
        return float(np.mean([r.rouge1.f1 for r in self.rows]))

    @property
    def mean_rouge_l_f1(self) -> float:
        return float(np.mean([r.rouge_l_f1 for r in self.rows]))


def evaluate_run(
    model_outputs: list[str],
    references: list[str],
    example_ids: list[str] | None = None,
    nll_rows: list[tuple[float, int]] | None = None,
) -> EvalReport:
    """Per-example ROUGE-1 and ROUGE-L for paired output/reference
    lists, optionally annotated with per-example (nll, token count)
    rows from a perplexity pass."""
    if len(model_outputs) != len(references):
        raise DataError(
            f"evaluate_run: {len(model_outputs)} outputs vs {len(references)} references"
        )
    if example_ids is None:
        example_ids = [str(i) for i in range(len(model_outputs))]
    if nll_rows is not None and len(nll_rows) != len(model_outputs):
        raise DataError("evaluate_run: nll_rows length mismatch")
    report = EvalReport()
    for i, (out, ref) in enumerate(zip(model_outputs, references)):
        r1 = rouge_n(out, ref, 1)
        rl = rouge_l(out, ref).f1 if word_tokens(out) and word_tokens(ref) else 0.0
        row = EvalRow(example_ids[i], r1, rl)
        if nll_rows is not None:
            row.nll_nats, row.n_scored_tokens = nll_rows[i]
        report.rows.append(row)
    return report


def write_report_csv(report: EvalReport, path) -> None:
    """Report CSV: one row per example plus a means footer row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["example_id", "rouge1_r", "rouge1_p", "rouge1_f1", "rougeL_f1", "nll_nats", "n_scored_tokens"]
        )
        for row in report.rows:
            writer.writerow(
                [
                    row.example_id,
                    f"{row.rouge1.recall:.6f}",
                    f"{row.rouge1.precision:.6f}",
                    f"{row.rouge1.f1:.6f}",
                    f"{row.rouge_l_f1:.6f}",
                    "" if row.nll_nats is None else f"{row.nll_nats:.6f}",
                    "" if row.n_scored_tokens is None else row.n_scored_tokens,
                ]
            )
        nlls = [r.nll_nats for r in report.rows if r.nll_nats is not None]
        counts = [r.n_scored_tokens for r in report.rows if r.n_scored_tokens is not None]
        mean_nll = ""
        if nlls and counts and sum(counts):
            mean_nll = f"{sum(n * c for n, c in zip(nlls, counts)) / sum(counts):.6f}"
        writer.writerow(
            [
                "MEAN",
                f"{np.mean([r.rouge1.recall for r in report.rows]):.6f}",
                f"{np.mean([r.rouge1.precision for r in report.rows]):.6f}",
                f"{np.mean([r.rouge1.f1 for r in report.rows]):.6f}",
                f"{report.mean_rouge_l_f1:.6f}",
                mean_nll,
                sum(counts) if counts else "",
            ]
        )
