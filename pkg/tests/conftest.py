import json

import pytest

from longsum.corpus import ArticleExample, Document


@pytest.fixture
def tiny_example() -> ArticleExample:
    return ArticleExample(
        title="granite bridges",
        lead="granite bridges span the river valley",
        citations=[
            Document("c1", "granite bridges span the river valley\n\nmasons cut stone", "citation"),
            Document("c2", "the valley floods in spring", "citation"),
        ],
        search_results=[
            Document("s1", "trade routes crossed the river", "search_result"),
        ],
        sections=["granite bridges span the river valley near town"],
    )


@pytest.fixture
def corpus_file(tmp_path, tiny_example):
    from longsum.corpus import write_corpus

    path = tmp_path / "corpus.jsonl"
    write_corpus([tiny_example], path)
    return path


def make_record(title="t", lead="a lead", sections=None, citations=None, search_results=None):
    return {
        "title": title,
        "lead": lead,
        "sections": sections if sections is not None else ["a section"],
        "citations": citations if citations is not None else [{"id": "c1", "text": "cite text"}],
        "search_results": search_results if search_results is not None else [],
    }


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record if isinstance(record, str) else json.dumps(record))
            fh.write("\n")
