"""Checkpoint format: a text manifest (names, shapes, dtype, byte
offsets) plus one raw little-endian float64 blob. Round-trips are
bit-exact."""

from __future__ import annotations

import os

import numpy as np

from .errors import DataError

MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "params.bin"
DTYPE = "<f8"


def save_arrays(directory, arrays: dict[str, np.ndarray]) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest_lines = []
    offset = 0
    chunks = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=np.float64).astype(DTYPE).tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        manifest_lines.append(f"{name}\t{shape}\t{DTYPE}\t{offset}\t{len(data)}")
        chunks.append(data)
        offset += len(data)
    with open(os.path.join(directory, MANIFEST_NAME), "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + ("\n" if manifest_lines else ""))
    with open(os.path.join(directory, BLOB_NAME), "wb") as fh:
        for chunk in chunks:
            fh.write(chunk)


def load_arrays(directory) -> dict[str, np.ndarray]:
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    blob_path = os.path.join(directory, BLOB_NAME)
    if not os.path.exists(manifest_path) or not os.path.exists(blob_path):
        raise DataError(f"checkpoint at {directory} is missing manifest or blob")
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    arrays: dict[str, np.ndarray] = {}
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            name, shape_str, dtype, offset_str, nbytes_str = line.split("\t")
            if dtype != DTYPE:
                raise DataError(f"unsupported checkpoint dtype {dtype}")
            shape = tuple(int(d) for d in shape_str.split(",")) if shape_str else ()
            offset, nbytes = int(offset_str), int(nbytes_str)
            arr = np.frombuffer(blob[offset : offset + nbytes], dtype=DTYPE).reshape(shape)
            arrays[name] = arr.copy()
    return arrays
