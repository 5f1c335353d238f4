"""Autoregressive generation: greedy decoding and beam search with the
((5 + n) / 6)^alpha length penalty.

Beam hypotheses are pruned and the winner selected by penalized score
(log-probability / length penalty); since all live hypotheses at a
pruning point share a length, pruning order coincides with raw
log-probability order. Termination is optimality-safe: the search stops
once no live hypothesis could beat the best finished one even with
free (zero-cost) continuations at the most favorable length, so on
enumerable instances the result matches exhaustive search. Generated
output never contains pad or separator ids; end-of-sequence only
terminates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .subword import EOS_ID, PAD_ID, SEP_ID

log = logging.getLogger(__name__)


@dataclass
class DecodeConfig:
    beam_size: int = 4
    alpha: float = 0.6
    max_output_len: int = 64
    eos_id: int = EOS_ID
    sep_id: int | None = SEP_ID
    banned_ids: tuple[int, ...] = (PAD_ID, SEP_ID)

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def length_penalty(length: int, alpha: float) -> float:
    """((5 + length) / 6) ** alpha; hypotheses are ranked by
    log-probability divided by this."""
    if length < 1:
        raise ValueError("length penalty is defined for length >= 1")
    return ((5.0 + length) / 6.0) ** alpha


@dataclass
class BeamHypothesis:
    tokens: list[int] = field(default_factory=list)
    log_prob: float = 0.0
    finished: bool = False

    def penalized(self, alpha: float) -> float:
        # the terminator counts toward the penalized length, so the
        # penalty is defined even for an empty output
        return self.log_prob / length_penalty(len(self.tokens) + 1, alpha)


def _next_logprobs(model, context: list[int], cfg: DecodeConfig) -> np.ndarray:
    logits = np.asarray(model.next_logits(context), dtype=np.float64)
    logp = logits - _logsumexp(logits)
    for banned in cfg.banned_ids:
        if banned != cfg.eos_id:
            logp[banned] = -np.inf
    return logp


def _logsumexp(x: np.ndarray) -> float:
    m = x.max()
    return float(m + np.log(np.exp(x - m).sum()))


def _seed_context(input_ids: list[int], cfg: DecodeConfig) -> list[int]:
    context = list(input_ids)
    if cfg.sep_id is not None:
        context.append(cfg.sep_id)
    return context


def greedy_decode(model, input_ids: list[int], cfg: DecodeConfig) -> list[int]:
    """Repeatedly append the argmax token; stop at end-of-sequence or
    after max_output_len tokens. Returns the output side only."""
    context = _seed_context(input_ids, cfg)
    output: list[int] = []
    while len(output) < cfg.max_output_len:
        logp = _next_logprobs(model, context, cfg)
        token = int(np.argmax(logp))
        if token == cfg.eos_id:
            break
        output.append(token)
        context.append(token)
    return output


def beam_search(
    model, input_ids: list[int], cfg: DecodeConfig, return_hypothesis: bool = False
):
    """Beam search over output continuations.

    Every live hypothesis is scored for immediate termination at every
    step (its end-of-sequence continuation), and extended with every
    admissible token; the beam keeps the best beam_size unfinished
    hypotheses by penalized score. Returns the best finished
    hypothesis's tokens, or the best unfinished ones (with a warning)
    if termination was never reachable.
    """
    context = _seed_context(input_ids, cfg)
    alive = [BeamHypothesis()]
    exhausted: list[BeamHypothesis] = []  # hit the length budget unfinished
    best_finished: BeamHypothesis | None = None
    # with log-probabilities <= 0, a hypothesis's penalized score can
    # only improve by lengthening toward the maximum penalized length
    best_case_penalty = length_penalty(cfg.max_output_len + 1, cfg.alpha)

    while alive:
        candidates: list[BeamHypothesis] = []
        for hyp in alive:
            logp = _next_logprobs(model, context + hyp.tokens, cfg)
            eos_score = hyp.log_prob + float(logp[cfg.eos_id])
            if np.isfinite(eos_score):
                finished = BeamHypothesis(hyp.tokens, eos_score, True)
                if best_finished is None or finished.penalized(
                    cfg.alpha
                ) > best_finished.penalized(cfg.alpha):
                    best_finished = finished
            if len(hyp.tokens) < cfg.max_output_len:
                for token in range(len(logp)):
                    if token == cfg.eos_id or not np.isfinite(logp[token]):
                        continue
                    candidates.append(
                        BeamHypothesis(hyp.tokens + [token], hyp.log_prob + float(logp[token]))
                    )
            else:
                exhausted.append(hyp)
        candidates.sort(key=lambda h: -h.penalized(cfg.alpha))
        alive = candidates[: cfg.beam_size]
        if best_finished is not None and alive:
            upper_bound = max(h.log_prob / best_case_penalty for h in alive)
            if best_finished.penalized(cfg.alpha) >= upper_bound:
                break

    if best_finished is None:
        log.warning("beam search found no finished hypothesis within the budget")
        pool = exhausted or [BeamHypothesis()]
        best = max(pool, key=lambda h: h.penalized(cfg.alpha))
        return best if return_hypothesis else best.tokens
    return best_finished if return_hypothesis else best_finished.tokens
