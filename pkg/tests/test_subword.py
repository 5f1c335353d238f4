"""Subword vocabulary construction, transduction, and sequence
assembly."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from longsum.errors import DataError
from longsum.subword import (
    EOS_ID,
    MIN_VOCAB_SIZE,
    NUM_RESERVED,
    PAD_ID,
    SEP_ID,
    Vocabulary,
    assemble_example,
    build_vocab,
    load_vocab,
    save_vocab,
    split_assembled,
    truncate_input,
)

GOLDEN_CORPUS = ["the cat sat on the mat", "the cat ate the mat"]
# produced once by an independent pair-merge trace script over
# GOLDEN_CORPUS at size 264: merges at/he/the/cat/mat
GOLDEN_MERGE_PIECES = [b"at", b"he", b"the", b"cat", b"mat"]
GOLDEN_FIXTURE = "the cat ate"
GOLDEN_FIXTURE_IDS = [261, 35, 262, 35, 259, 104]


class TestBuildVocab:
    def test_repeated_pair_is_merged(self):
        vocab = build_vocab(["aaaa"], size=MIN_VOCAB_SIZE + 8)
        assert b"aa" in vocab.pieces

    def test_empty_corpus_keeps_reserved_plus_bytes(self):
        vocab = build_vocab([], size=1000)
        assert vocab.size == MIN_VOCAB_SIZE
        assert vocab.merges == []

    def test_deterministic_rebuild(self):
        a = build_vocab(GOLDEN_CORPUS, size=300)
        b = build_vocab(GOLDEN_CORPUS, size=300)
        assert a.pieces == b.pieces and a.merges == b.merges

    def test_too_small_size_is_error(self):
        with pytest.raises(DataError):
            build_vocab(["text"], size=MIN_VOCAB_SIZE - 1)

    def test_reserved_ids_never_produced_by_merges(self):
        vocab = build_vocab(GOLDEN_CORPUS, size=400)
        for left, right, new in vocab.merges:
            assert new >= MIN_VOCAB_SIZE
            assert left >= NUM_RESERVED and right >= NUM_RESERVED

    def test_golden_merge_trace(self):
        vocab = build_vocab(GOLDEN_CORPUS, size=264)
        assert vocab.pieces[259:] == GOLDEN_MERGE_PIECES


class TestEncodeDecode:
    def test_empty_string(self):
        vocab = build_vocab(GOLDEN_CORPUS, size=264)
        assert vocab.encode("") == []

    def test_golden_fixture_ids(self):
        vocab = build_vocab(GOLDEN_CORPUS, size=264)
        assert vocab.encode(GOLDEN_FIXTURE) == GOLDEN_FIXTURE_IDS
        assert vocab.decode(GOLDEN_FIXTURE_IDS) == GOLDEN_FIXTURE

    def test_never_emits_reserved_ids(self):
        vocab = build_vocab(GOLDEN_CORPUS, size=280)
        ids = vocab.encode("the cat sat on the mat at the hat")
        assert all(i >= NUM_RESERVED for i in ids)

    def test_out_of_range_id_is_error(self):
        vocab = build_vocab([], size=MIN_VOCAB_SIZE)
        with pytest.raises(DataError):
            vocab.decode([vocab.size])

    def test_reserved_ids_are_skipped_on_decode(self):
        vocab = build_vocab([], size=MIN_VOCAB_SIZE)
        ids = vocab.encode("hi")
        assert vocab.decode([PAD_ID] + ids + [SEP_ID, EOS_ID]) == "hi"

    @settings(max_examples=200)
    @given(st.text())
    def test_round_trip_on_arbitrary_text(self, text):
        vocab = build_vocab(GOLDEN_CORPUS, size=264)
        assert vocab.decode(vocab.encode(text)) == text

    @given(st.text(alphabet="theca mst", min_size=0, max_size=40))
    def test_round_trip_on_in_domain_text(self, text):
        vocab = build_vocab(GOLDEN_CORPUS, size=300)
        assert vocab.decode(vocab.encode(text)) == text


class TestTruncate:
    def test_short_sequence_unchanged(self):
        assert truncate_input([5, 6, 7], 10) == [5, 6, 7]

    def test_truncates_to_budget(self):
        assert truncate_input(list(range(10, 20)), 3) == [10, 11, 12]

    def test_prefix_property_across_budgets(self):
        vocab = build_vocab(GOLDEN_CORPUS, size=280)
        ids = vocab.encode(" ".join(GOLDEN_CORPUS) * 30)
        a = truncate_input(ids, 100)
        b = truncate_input(ids, 500)
        assert b[: len(a)] == a

    def test_budget_below_one_is_error(self):
        with pytest.raises(DataError):
            truncate_input([5], 0)


class TestAssemble:
    def test_construction_with_reserved_ids(self):
        assert assemble_example([5], [7]) == [5, SEP_ID, 7, EOS_ID]

    def test_empty_target(self):
        assert assemble_example([5, 6], []) == [5, 6, SEP_ID, EOS_ID]

    def test_reserved_id_in_input_is_error(self):
        with pytest.raises(DataError):
            assemble_example([SEP_ID], [7])

    @given(
        st.lists(st.integers(3, 500), max_size=60), st.lists(st.integers(3, 500), max_size=60)
    )
    def test_length_and_structure(self, m, y):
        combined = assemble_example(m, y)
        assert len(combined) == len(m) + len(y) + 2
        assert combined.count(SEP_ID) == 1
        assert combined[-1] == EOS_ID
        assert combined.count(EOS_ID) == 1

    @given(
        st.lists(st.integers(3, 500), max_size=20), st.lists(st.integers(3, 500), max_size=20)
    )
    def test_split_inverts_assemble(self, m, y):
        assert split_assembled(assemble_example(m, y)) == (m, y)


class TestVocabFile:
    def test_save_load_round_trip(self, tmp_path):
        vocab = build_vocab(GOLDEN_CORPUS + ["tabs\tand\nnewlines \x00"], size=300)
        path = tmp_path / "vocab.txt"
        save_vocab(vocab, path)
        loaded = load_vocab(path)
        assert loaded.pieces == vocab.pieces
        assert loaded.merges == vocab.merges
        text = "the cat\tate \x00 snacks"
        assert loaded.encode(text) == vocab.encode(text)

    def test_missing_file_is_error(self, tmp_path):
        with pytest.raises(DataError):
            load_vocab(tmp_path / "absent.txt")
