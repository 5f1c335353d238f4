"""Byte-level subword vocabulary: pair-merge training, greedy encoding,
and assembly of combined input/output training sequences.

Token ids 0/1/2 are reserved (pad, end-of-sequence, separator) and are
never produced by encoding; ids 3..258 cover every byte value, so any
UTF-8 string is encodable and decode(encode(s)) == s. Merged subwords
take ids from 259 upward in merge order.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError

PAD_ID = 0
EOS_ID = 1
SEP_ID = 2
NUM_RESERVED = 3
NUM_BYTES = 256
MIN_VOCAB_SIZE = NUM_RESERVED + NUM_BYTES

RESERVED_NAMES = {PAD_ID: "<pad>", EOS_ID: "<eos>", SEP_ID: "<sep>"}

# chunks are runs of non-space or runs of whitespace; merges never
# cross a chunk boundary and concatenating chunks restores the text
_CHUNK_RE = re.compile(r"\S+|\s+")


@dataclass
class Vocabulary:
    """Subword inventory: id -> byte sequence, plus the ranked merge
    rules that produced it."""

    pieces: list[bytes]  # index = id; reserved ids hold b""
    merges: list[tuple[int, int, int]] = field(default_factory=list)  # (left, right, new)

    def __post_init__(self):
        self._merge_rank = {(l, r): (rank, new) for rank, (l, r, new) in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.pieces)

    def piece(self, token_id: int) -> bytes:
        if not 0 <= token_id < self.size:
            raise DataError(f"token id {token_id} out of range [0, {self.size})")
        return self.pieces[token_id]

    def _encode_chunk(self, chunk: bytes) -> list[int]:
        ids = [NUM_RESERVED + b for b in chunk]
        while len(ids) > 1:
            best = None
            for pair in zip(ids, ids[1:]):
                entry = self._merge_rank.get(pair)
                if entry is not None and (best is None or entry[0] < best[0]):
                    best = entry
            if best is None:
                break
            _, new_id = best
            left, right, _ = self.merges[best[0]]
            merged = []
            i = 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == left and ids[i + 1] == right:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(ids[i])
                    i += 1
            ids = merged
        return ids

    def encode(self, text: str) -> list[int]:
        """Greedy merge-rule application; never emits reserved ids."""
        ids: list[int] = []
        for chunk in _CHUNK_RE.findall(text):
            ids.extend(self._encode_chunk(chunk.encode("utf-8")))
        return ids

    def decode(self, ids: list[int]) -> str:
        """Inverse of encode on encode's image. Reserved ids are
        skipped; out-of-range ids raise; byte sequences that are not
        valid UTF-8 decode with replacement characters."""
        data = b"".join(self.piece(i) for i in ids if i >= NUM_RESERVED)
        return data.decode("utf-8", errors="replace")


def build_vocab(texts, size: int) -> Vocabulary:
    """Iteratively merge the most frequent adjacent token pair (count
    ties break to the smaller id pair) until the target size is reached
    or no pair occurs twice."""
    if size < MIN_VOCAB_SIZE:
        raise DataError(
            f"vocabulary size {size} below minimum {MIN_VOCAB_SIZE} (reserved + byte alphabet)"
        )
    pieces: list[bytes] = [b""] * NUM_RESERVED + [bytes([b]) for b in range(NUM_BYTES)]

    chunk_freq: Counter = Counter()
    for text in texts:
        chunk_freq.update(_CHUNK_RE.findall(text))

    # chunk type -> current token-id sequence
    sequences: dict[str, list[int]] = {
        chunk: [NUM_RESERVED + b for b in chunk.encode("utf-8")] for chunk in chunk_freq
    }

    merges: list[tuple[int, int, int]] = []
    while len(pieces) < size:
        pair_counts: Counter = Counter()
        for chunk, ids in sequences.items():
            freq = chunk_freq[chunk]
            for pair in zip(ids, ids[1:]):
                pair_counts[pair] += freq
        if not pair_counts:
            break
        (left, right), count = min(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if count < 2:
            break
        new_id = len(pieces)
        pieces.append(pieces[left] + pieces[right])
        merges.append((left, right, new_id))
        for chunk, ids in sequences.items():
            if len(ids) < 2:
                continue
            merged = []
            i = 0
            while i < len(ids):
                if i + 1 < len(ids) and ids[i] == left and ids[i + 1] == right:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(ids[i])
                    i += 1
            sequences[chunk] = merged
    return Vocabulary(pieces, merges)


def truncate_input(ids: list[int], budget: int) -> list[int]:
    """First min(budget, n) ids; targets are never truncated."""
    if budget < 1:
        raise DataError(f"token budget must be >= 1, got {budget}")
    return ids[:budget]


def assemble_example(input_ids: list[int], target_ids: list[int]) -> list[int]:
    """Combined sequence: input, separator, target, end-of-sequence."""
    for token in input_ids + target_ids:
        if token < NUM_RESERVED:
            raise DataError("assemble_example: reserved id in input or target")
    return list(input_ids) + [SEP_ID] + list(target_ids) + [EOS_ID]


def split_assembled(ids: list[int]) -> tuple[list[int], list[int]]:
    """Recover (input, target) from an assembled sequence; the target
    excludes the trailing end-of-sequence token."""
    if ids.count(SEP_ID) != 1:
        raise DataError("assembled sequence must contain exactly one separator")
    sep = ids.index(SEP_ID)
    target = ids[sep + 1 :]
    if target and target[-1] == EOS_ID:
        target = target[:-1]
    return ids[:sep], target


def _escape(piece: bytes) -> str:
    out = []
    for b in piece:
        ch = chr(b)
        if b == 0x5C:
            out.append("\\\\")
        elif 0x20 < b < 0x7F:
            out.append(ch)
        else:
            out.append(f"\\x{b:02x}")
    return "".join(out)


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "\\":
            if text[i + 1] == "\\":
                out.append(0x5C)
                i += 2
            else:
                out.append(int(text[i + 2 : i + 4], 16))
                i += 4
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


def save_vocab(vocab: Vocabulary, path) -> None:
    """One `id<TAB>subword` line per entry, then the merge rules."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"size\t{vocab.size}\n")
        fh.write("[tokens]\n")
        for token_id, piece in enumerate(vocab.pieces):
            if token_id in RESERVED_NAMES:
                fh.write(f"{token_id}\t{RESERVED_NAMES[token_id]}\n")
            else:
                fh.write(f"{token_id}\t{_escape(piece)}\n")
        fh.write("[merges]\n")
        for left, right, new in vocab.merges:
            fh.write(f"{left}\t{right}\t{new}\n")


def load_vocab(path) -> Vocabulary:
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read vocabulary file {path}: {exc}") from exc
    with fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("size\t"):
        raise DataError(f"vocabulary file {path} missing size header")
    size = int(lines[0].split("\t")[1])
    pieces: list[bytes] = []
    merges: list[tuple[int, int, int]] = []
    section = None
    for line in lines[1:]:
        if line == "[tokens]":
            section = "tokens"
            continue
        if line == "[merges]":
            section = "merges"
            continue
        if section == "tokens":
            token_id_str, piece_str = line.split("\t", 1)
            token_id = int(token_id_str)
            if token_id != len(pieces):
                raise DataError(f"vocabulary file {path}: non-dense id {token_id}")
            pieces.append(b"" if token_id < NUM_RESERVED else _unescape(piece_str))
        elif section == "merges":
            left, right, new = (int(x) for x in line.split("\t"))
            merges.append((left, right, new))
    if len(pieces) != size:
        raise DataError(f"vocabulary file {path}: size header {size} != {len(pieces)} entries")
    return Vocabulary(pieces, merges)
