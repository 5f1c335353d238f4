"""Synthetic corpora and token-level tasks for experiments and
acceptance checks.

Three generators: a planted-paragraph corpus (the lead's source
paragraph hidden at a late position among distractors, for comparing
extractors), an answer-position corpus (the lead-predicting paragraph
uniformly placed inside the first fraction of the input, for
input-budget trend runs), and a fixed-size copy task over raw token
ids."""

from __future__ import annotations

import numpy as np

from .corpus import ArticleExample, Document
from .subword import NUM_RESERVED, assemble_example

_COMMON = (
    "stone river cloud meadow harbor lantern copper valley timber "
    "anchor barley cinder dapple ember fennel garnet hollow ivory "
    "juniper kestrel"
).split()

_LEAD_WORDS = (
    "quartz nebula sonata glacier falcon indigo marrow obsidian "
    "pennant rhubarb saffron tundra velvet willow zephyr bramble "
    "crimson duskwood"
).split()


def _sample_words(rng: np.random.Generator, pool: list[str], n: int) -> list[str]:
    return [pool[i] for i in rng.integers(0, len(pool), n)]


def planted_paragraph_corpus(
    n_examples: int = 50,
    n_distractors: int = 20,
    seed: int = 0,
    distractor_words: int = 24,
    lead_words: int = 16,
) -> list[ArticleExample]:
    """Each example's lead appears verbatim inside one source paragraph
    planted at a random late position among the distractors.

    The planted paragraph mentions the title twice; some distractors
    mention it once (retrieval ties broken against the late-planted
    paragraph) and a few twice, so title-based retrieval is informative
    but imperfect. Lead words come from an alphabet distractors never
    use.
    """
    rng = np.random.default_rng(seed)
    examples = []
    for i in range(n_examples):
        title = f"topic{i}"
        lead_body = _sample_words(rng, _LEAD_WORDS, lead_words)
        planted = " ".join([title] + lead_body + [title])
        lead = " ".join(lead_body)
        paragraphs = []
        for d in range(n_distractors):
            words = _sample_words(rng, _COMMON, distractor_words)
            roll = rng.random()
            mentions = 2 if roll < 0.10 else (1 if roll < 0.32 else 0)
            for _ in range(mentions):
                words[int(rng.integers(0, len(words)))] = title
            paragraphs.append(" ".join(words))
        # plant in the late half of the pool
        slot = int(rng.integers(n_distractors // 2, n_distractors + 1))
        paragraphs.insert(slot, planted)
        text = "\n\n".join(paragraphs)
        examples.append(
            ArticleExample(
                title=title,
                lead=lead,
                citations=[Document(id=f"doc{i}", text=text, origin="citation")],
                search_results=[],
                sections=[],
            )
        )
    return examples


def answer_position_corpus(
    n_examples: int,
    window: int,
    answer_len: int = 8,
    seed: int = 0,
) -> list[ArticleExample]:
    """Corpus whose lead is an answer string planted at a uniformly
    random character offset within the first ``window`` characters of
    the input text.

    Built from single-byte alphabets (distractors lowercase, answers
    uppercase) so that with a merge-free byte vocabulary one character
    is one token and character offsets are token offsets. Titles have a
    fixed width, so the assembled input text (title + newline +
    paragraph) keeps the planted offsets identical across examples.
    """
    rng = np.random.default_rng(seed)
    lower = "abcdefghij"
    upper = "ABCDEFGHIJ"
    examples = []
    prefix = 5  # four title bytes plus the newline from input-text assembly
    total = window * 2  # document extends beyond the window
    if window < prefix + answer_len:
        raise ValueError("window too small for the title prefix plus the answer")
    for i in range(n_examples):
        answer = "".join(upper[j] for j in rng.integers(0, len(upper), answer_len))
        body = [lower[j] for j in rng.integers(0, len(lower), total)]
        start = int(rng.integers(prefix, window - answer_len + 1))
        for j, ch in enumerate(answer):
            body[start - prefix + j] = ch
        examples.append(
            ArticleExample(
                title=f"t{i:03d}",
                lead=answer,
                citations=[Document(id=f"doc{i}", text="".join(body), origin="citation")],
                search_results=[],
                sections=[],
            )
        )
    return examples


def copy_task(
    n_examples: int = 256,
    length: int = 16,
    vocab_size: int = 50,
    seed: int = 0,
) -> list[tuple[list[int], int]]:
    """Fixed set of assembled copy examples: the target repeats the
    input. Returns (combined ids, n_input) pairs ready for training."""
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n_examples):
        tokens = [int(t) for t in rng.integers(NUM_RESERVED, vocab_size, length)]
        examples.append((assemble_example(tokens, tokens), length))
    return examples
