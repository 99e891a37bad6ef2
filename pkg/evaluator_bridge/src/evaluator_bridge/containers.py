"""Minimal tensor container I/O.

File layout: an 8-byte little-endian unsigned length, a JSON header of
exactly that many bytes mapping tensor names to ``{"dtype", "shape",
"data_offsets"}``, then the raw tensor bytes.  Offsets are relative to
the end of the header and must tile the data region contiguously in
lexicographic name order.

This is an independent implementation kept small on purpose: the bridge
must be able to read checkpoints produced by other tools (and write
fixtures they can read back) without importing them.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_HEADER_LEN = struct.Struct("<Q")
_DTYPES = {"F32": np.float32, "F16": np.float16}


class ContainerFormatError(Exception):
    """Raised when a container file does not follow the format."""


def _fail(path: Path, reason: str) -> ContainerFormatError:
    return ContainerFormatError(f"{path}: {reason}")


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    """Read a container file into float32 arrays (F16 is widened)."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER_LEN.size:
        raise _fail(path, "file shorter than the 8-byte header length")
    (header_len,) = _HEADER_LEN.unpack_from(blob)
    data_start = _HEADER_LEN.size + header_len
    if data_start > len(blob):
        raise _fail(path, f"header length {header_len} exceeds file size")
    try:
        header = json.loads(blob[_HEADER_LEN.size:data_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise _fail(path, f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise _fail(path, "header must be a JSON object")

    data = blob[data_start:]
    tensors: dict[str, np.ndarray] = {}
    expected_offset = 0
    for name in sorted(header):
        meta = header[name]
        if not isinstance(meta, dict):
            raise _fail(path, f"entry {name!r} is not an object")
        try:
            dtype_tag = meta["dtype"]
            shape = meta["shape"]
            begin, end = meta["data_offsets"]
        except (KeyError, TypeError, ValueError) as exc:
            raise _fail(path, f"entry {name!r} is missing dtype/shape/data_offsets") from exc
        if dtype_tag not in _DTYPES:
            raise _fail(path, f"entry {name!r} has unsupported dtype {dtype_tag!r}")
        if not isinstance(shape, list) or not all(isinstance(d, int) and d >= 0 for d in shape):
            raise _fail(path, f"entry {name!r} has a malformed shape")
        if begin != expected_offset:
            raise _fail(path, f"entry {name!r} starts at {begin}, expected {expected_offset}")
        dtype = _DTYPES[dtype_tag]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * dtype().itemsize
        if end - begin != nbytes:
            raise _fail(path, f"entry {name!r} spans {end - begin} bytes, shape needs {nbytes}")
        if end > len(data):
            raise _fail(path, f"entry {name!r} runs past the end of the file")
        arr = np.frombuffer(data[begin:end], dtype=dtype).reshape(shape)
        tensors[name] = arr.astype(np.float32)
        expected_offset = end
    if expected_offset != len(data):
        raise _fail(path, f"{len(data) - expected_offset} trailing bytes after the last tensor")
    return tensors


def write_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    """Write float32 tensors as a container file (canonical layout)."""
    path = Path(path)
    header: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        raw = arr.tobytes()
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        chunks.append(raw)
        offset += len(raw)
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path.write_bytes(_HEADER_LEN.pack(len(header_bytes)) + header_bytes + b"".join(chunks))
