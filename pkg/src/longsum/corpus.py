"""Corpus loading, clone detection, deterministic splitting, and
dataset characterization.

Corpus files are UTF-8 JSON lines; each record carries a title, the
target lead text, optional article section texts (used only for clone
detection), and two document collections (cited sources and web search
results).
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator

from .errors import DataError
from .metrics import rouge_n
from .words import unigram_set, word_tokens

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("title", "lead", "sections", "citations", "search_results")


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    origin: str  # "citation" or "search_result"


@dataclass
class ArticleExample:
    title: str
    lead: str
    citations: list[Document] = field(default_factory=list)
    search_results: list[Document] = field(default_factory=list)
    sections: list[str] = field(default_factory=list)

    @property
    def example_id(self) -> str:
        return self.title

    def input_documents(self) -> list[Document]:
        """Citations followed by search results."""
        return list(self.citations) + list(self.search_results)


@dataclass(frozen=True)
class RecordError:
    line_number: int
    message: str


def _parse_documents(raw, origin: str, line_number: int) -> list[Document]:
    docs = []
    seen = set()
    for entry in raw:
        if not isinstance(entry, dict) or "id" not in entry or "text" not in entry:
            raise DataError(f"line {line_number}: document entries need 'id' and 'text'")
        doc_id = str(entry["id"])
        if doc_id in seen:
            raise DataError(f"line {line_number}: duplicate document id {doc_id!r}")
        seen.add(doc_id)
        docs.append(Document(id=doc_id, text=str(entry["text"]), origin=origin))
    return docs


def _parse_record(record: dict, line_number: int) -> ArticleExample:
    for name in REQUIRED_FIELDS:
        if name not in record:
            raise DataError(f"line {line_number}: missing required field {name!r}")
    if not str(record["title"]):
        raise DataError(f"line {line_number}: empty title")
    return ArticleExample(
        title=str(record["title"]),
        lead=str(record["lead"]),
        sections=[str(s) for s in record["sections"]],
        citations=_parse_documents(record["citations"], "citation", line_number),
        search_results=_parse_documents(record["search_results"], "search_result", line_number),
    )


def load_corpus(path, errors: list[RecordError] | None = None) -> Iterator[ArticleExample]:
    """Stream examples from a JSON-lines corpus file.

    Malformed records are skipped and reported (with their line number)
    to the ``errors`` list and the module logger; an unreadable file
    raises DataError.
    """
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read corpus file {path}: {exc}") from exc
    with fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise DataError(f"line {line_number}: record is not an object")
                yield _parse_record(record, line_number)
            except (json.JSONDecodeError, DataError) as exc:
                msg = str(exc)
                log.warning("corpus %s: %s", path, msg)
                if errors is not None:
                    errors.append(RecordError(line_number, msg))


def example_to_record(example: ArticleExample) -> dict:
    return {
        "title": example.title,
        "lead": example.lead,
        "sections": list(example.sections),
        "citations": [{"id": d.id, "text": d.text} for d in example.citations],
        "search_results": [{"id": d.id, "text": d.text} for d in example.search_results],
    }


def write_corpus(examples: Iterable[ArticleExample], path) -> None:
    """Canonical JSON-lines serialization; load -> write round-trips
    byte-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example_to_record(example), ensure_ascii=False))
            fh.write("\n")


def clone_score(document: Document, article: ArticleExample) -> float:
    """Maximum per-section unigram recall of the document against the
    article's sections.

    Sections with no unigrams are skipped; if every section is empty
    the score is undefined and raises.
    """
    doc_unigrams = unigram_set(document.text)
    best = None
    for section in article.sections:
        section_unigrams = unigram_set(section)
        if not section_unigrams:
            continue
        recall = len(doc_unigrams & section_unigrams) / len(section_unigrams)
        best = recall if best is None else max(best, recall)
    if best is None:
        raise DataError(f"clone_score: article {article.title!r} has no non-empty sections")
    return best


def is_clone(document: Document, article: ArticleExample) -> bool:
    """Clone iff the max-section unigram recall strictly exceeds 0.5."""
    return clone_score(document, article) > 0.5


def drop_clones(example: ArticleExample) -> ArticleExample:
    """Remove clone documents from search_results (citations are kept
    as-is). Examples without section texts are returned unchanged."""
    if not any(unigram_set(s) for s in example.sections):
        return example
    kept = [d for d in example.search_results if not is_clone(d, example)]
    return replace(example, search_results=kept)


@dataclass
class SplitAssignment:
    assignment: dict[str, str]

    def ids_for(self, split: str) -> list[str]:
        return [i for i, s in self.assignment.items() if s == split]

    def __getitem__(self, example_id: str) -> str:
        return self.assignment[example_id]


def _split_bucket(example_id: str, seed: int) -> int:
    digest = hashlib.blake2b(
        f"{seed}\x1f{example_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % 10


def split_for_id(example_id: str, seed: int) -> str:
    """Deterministic 80/10/10 bucket for one id: a stable 64-bit hash
    of (seed, id) mod 10 mapped to {0..7: train, 8: dev, 9: test}."""
    bucket = _split_bucket(example_id, seed)
    if bucket <= 7:
        return "train"
    return "dev" if bucket == 8 else "test"


def split_dataset(ids: list[str], seed: int) -> SplitAssignment:
    """Assign each id to train/dev/test, independent of list order."""
    if len(set(ids)) != len(ids):
        raise DataError("split_dataset: duplicate ids")
    return SplitAssignment({i: split_for_id(i, seed) for i in ids})


def amenability_score(example: ArticleExample) -> float:
    """Unigram recall of the lead against the concatenated input
    documents, scaled to [0, 100]. 100 means the lead is extractively
    embedded in the input."""
    if not word_tokens(example.lead):
        raise DataError(f"amenability_score: example {example.title!r} has an empty lead")
    docs = example.input_documents()
    input_text = "\n".join(d.text for d in docs)
    if not word_tokens(input_text):
        raise DataError(f"amenability_score: example {example.title!r} has no input text")
    return 100.0 * rouge_n(candidate=input_text, reference=example.lead, n=1).recall


def corpus_amenability(examples: Iterable[ArticleExample]) -> float:
    """Corpus-level amenability: mean of per-example scores."""
    scores = [amenability_score(e) for e in examples]
    if not scores:
        raise DataError("corpus_amenability: empty corpus")
    return sum(scores) / len(scores)


PERCENTILES = (20, 40, 50, 60, 80, 100)

STAT_ROWS = (
    "lead_size",
    "num_citations",
    "citations_size",
    "num_search_results",
    "search_results_size",
)


def nearest_rank(sorted_values: list, p: int):
    """Nearest-rank percentile: the ceil(p/100 * n)-th order statistic."""
    n = len(sorted_values)
    if n == 0:
        raise DataError("percentile of empty data")
    rank = max(1, math.ceil(p * n / 100))
    return sorted_values[rank - 1]


def corpus_stats(examples: Iterable[ArticleExample]) -> dict[str, dict[int, int]]:
    """Percentile table of corpus aspects (sizes in words): lead size,
    citation count and total size, search-result count and total size."""
    values: dict[str, list[int]] = {name: [] for name in STAT_ROWS}
    n_examples = 0
    for ex in examples:
        n_examples += 1
        values["lead_size"].append(len(word_tokens(ex.lead)))
        values["num_citations"].append(len(ex.citations))
        values["citations_size"].append(sum(len(word_tokens(d.text)) for d in ex.citations))
        values["num_search_results"].append(len(ex.search_results))
        values["search_results_size"].append(
            sum(len(word_tokens(d.text)) for d in ex.search_results)
        )
    if n_examples == 0:
        raise DataError("corpus_stats: empty corpus")
    table: dict[str, dict[int, int]] = {}
    for name, vals in values.items():
        vals.sort()
        table[name] = {p: nearest_rank(vals, p) for p in PERCENTILES}
    return table


def write_stats_csv(table: dict[str, dict[int, int]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["aspect"] + [str(p) for p in PERCENTILES])
        for name in STAT_ROWS:
            writer.writerow([name] + [table[name][p] for p in PERCENTILES])
