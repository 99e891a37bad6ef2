"""Checkpoint storage: a flat binary tensor container plus checkpoint-set handling.

Container layout (compatible with the safetensors framing):

* bytes 0..7: little-endian u64 ``H``, the header length in bytes
* bytes 8..8+H-1: UTF-8 JSON object mapping tensor name to
  ``{"dtype": "F32"|"F16", "shape": [ints], "data_offsets": [begin, end]}``
* remaining bytes: contiguous little-endian tensor data; ``data_offsets``
  are relative to the first byte after the header

Offsets must tile the data region without gaps or overlaps when names are
taken in lexicographic order. Writers emit that canonical order with a
compact, key-sorted JSON header, so a canonically written file round-trips
bit for bit.

Checkpoint sets are described by a JSON manifest
``{"checkpoints": [{"iteration": int, "path": str}, ...], "kind": "dense"|"lora"}``
with paths resolved relative to the manifest file. Iterations are explicit;
nothing is ever parsed out of filenames.
"""

from __future__ import annotations

import json
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ContainerError",
    "ManifestError",
    "EmptyWindowError",
    "TensorEntry",
    "TensorMap",
    "Checkpoint",
    "CheckpointSet",
    "LoraCheckpoint",
    "LoraCheckpointSet",
    "encode_tensor_map",
    "decode_tensor_map",
    "save_checkpoint",
    "load_checkpoint",
    "load_manifest",
    "load_set",
    "load_lora_set",
    "select_window",
]

_DTYPES = {"F32": np.dtype("<f4"), "F16": np.dtype("<f2")}
_DTYPE_SIZES = {"F32": 4, "F16": 2}

# Suffix convention for low-rank adapter containers: each adapted target
# stores a "<target>.lora_B" (d_out x r) and "<target>.lora_A" (r x d_in).
_LORA_B_SUFFIX = ".lora_B"
_LORA_A_SUFFIX = ".lora_A"


class ContainerError(ValueError):
    """Raised when container bytes violate the format."""


class ManifestError(ValueError):
    """Raised for bad manifests, iteration ordering, or schema mismatches."""


class EmptyWindowError(ValueError):
    """Raised when a window selection matches no checkpoints."""


def _as_f32(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float32)
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class TensorEntry:
    """One named tensor: in-memory data is always float32, row-major.

    ``dtype`` records the storage type ("F32" or "F16"); F16 data is widened
    to float32 on load and narrowed back on save, which is lossless.
    """

    name: str
    dtype: str
    shape: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if not self.name:
            raise ContainerError("tensor name must be non-empty")
        if self.dtype not in _DTYPES:
            raise ContainerError(f"tensor {self.name!r}: unsupported dtype {self.dtype!r}")
        if any(d < 0 for d in self.shape):
            raise ContainerError(f"tensor {self.name!r}: negative dimension in shape {self.shape}")
        data = _as_f32(self.data)
        expected = int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1
        if data.size != expected:
            raise ContainerError(
                f"tensor {self.name!r}: data has {data.size} elements, shape {self.shape} needs {expected}"
            )
        data = data.reshape(self.shape)
        data.flags.writeable = False
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        object.__setattr__(self, "data", data)


class TensorMap:
    """Immutable ordered collection of named tensors (canonical name order)."""

    def __init__(self, entries: Iterable[TensorEntry] | Mapping[str, np.ndarray]):
        if isinstance(entries, Mapping):
            entries = [
                TensorEntry(name, "F32", np.asarray(arr).shape, arr)
                for name, arr in entries.items()
            ]
        items = sorted(entries, key=lambda e: e.name)
        names = [e.name for e in items]
        if len(set(names)) != len(names):
            dup = next(n for i, n in enumerate(names) if n in names[:i])
            raise ContainerError(f"duplicate tensor name {dup!r}")
        self._entries: tuple[TensorEntry, ...] = tuple(items)
        self._index = {e.name: e for e in items}

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], dtypes: Mapping[str, str] | None = None) -> "TensorMap":
        dtypes = dtypes or {}
        return cls(
            [
                TensorEntry(name, dtypes.get(name, "F32"), np.asarray(arr).shape, arr)
                for name, arr in arrays.items()
            ]
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self._entries)

    def entries(self) -> tuple[TensorEntry, ...]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __getitem__(self, name: str) -> np.ndarray:
        return self._index[name].data

    def dtype(self, name: str) -> str:
        return self._index[name].dtype

    def shape(self, name: str) -> tuple[int, ...]:
        return self._index[name].shape

    def schema(self) -> tuple[tuple[str, str, tuple[int, ...]], ...]:
        """Signature used for set compatibility checks: (name, dtype, shape)."""
        return tuple((e.name, e.dtype, e.shape) for e in self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.schema() != other.schema():
            return False
        return all(
            np.array_equal(a.data, b.data)
            for a, b in zip(self._entries, other._entries)
        )

    def __repr__(self) -> str:
        inner = ", ".join(f"{e.name}:{e.dtype}{list(e.shape)}" for e in self._entries)
        return f"TensorMap({inner})"


def encode_tensor_map(tensors: TensorMap) -> bytes:
    """Serialize to canonical container bytes (sorted names, compact header)."""
    header: dict[str, dict] = {}
    blobs: list[bytes] = []
    offset = 0
    for entry in tensors.entries():
        raw = np.ascontiguousarray(entry.data, dtype=_DTYPES[entry.dtype]).tobytes()
        header[entry.name] = {
            "dtype": entry.dtype,
            "shape": list(entry.shape),
            "data_offsets": [offset, offset + len(raw)],
        }
        blobs.append(raw)
        offset += len(raw)
    header_json = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<Q", len(header_json)) + header_json + b"".join(blobs)


def _reject_duplicate_keys(pairs):
    seen = set()
    out = {}
    for key, value in pairs:
        if key in seen:
            raise ContainerError(f"duplicate tensor name {key!r} in header")
        seen.add(key)
        out[key] = value
    return out


def decode_tensor_map(buf: bytes) -> TensorMap:
    """Parse container bytes, validating framing, offsets, and dtypes."""
    if len(buf) < 8:
        raise ContainerError(f"container too short for header length field ({len(buf)} bytes)")
    (header_len,) = struct.unpack("<Q", buf[:8])
    if 8 + header_len > len(buf):
        raise ContainerError(
            f"declared header length {header_len} exceeds container size {len(buf)}"
        )
    try:
        header = json.loads(buf[8 : 8 + header_len].decode("utf-8"), object_pairs_hook=_reject_duplicate_keys)
    except ContainerError:
        raise
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"header is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ContainerError(f"header must be a JSON object, got {type(header).__name__}")

    data = buf[8 + header_len :]
    entries = []
    for name, info in header.items():
        if not isinstance(name, str) or not name:
            raise ContainerError("tensor names must be non-empty strings")
        if not isinstance(info, dict) or set(info) != {"dtype", "shape", "data_offsets"}:
            raise ContainerError(
                f"tensor {name!r}: header entry must have exactly dtype/shape/data_offsets"
            )
        dtype = info["dtype"]
        if dtype not in _DTYPES:
            raise ContainerError(f"tensor {name!r}: unsupported dtype {dtype!r}")
        shape = info["shape"]
        if not isinstance(shape, list) or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape):
            raise ContainerError(f"tensor {name!r}: shape must be a list of non-negative integers")
        offsets = info["data_offsets"]
        if (
            not isinstance(offsets, list)
            or len(offsets) != 2
            or not all(isinstance(o, int) and not isinstance(o, bool) for o in offsets)
        ):
            raise ContainerError(f"tensor {name!r}: data_offsets must be a [begin, end] pair")
        begin, end = offsets
        if not (0 <= begin <= end <= len(data)):
            raise ContainerError(
                f"tensor {name!r}: data_offsets [{begin}, {end}] outside data region of {len(data)} bytes"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        expected = count * _DTYPE_SIZES[dtype]
        if end - begin != expected:
            raise ContainerError(
                f"tensor {name!r}: data_offsets span {end - begin} bytes, dtype and shape need {expected}"
            )
        entries.append((name, dtype, tuple(shape), begin, end, count))

    entries.sort(key=lambda item: item[0])
    cursor = 0
    for name, _, _, begin, end, _ in entries:
        if begin != cursor:
            raise ContainerError(
                f"tensor {name!r}: data_offsets begin at {begin}, expected {cursor} "
                "(offsets must tile the data region in name order)"
            )
        cursor = end
    if cursor != len(data):
        raise ContainerError(
            f"data region has {len(data)} bytes but tensors account for {cursor}"
        )

    built = []
    for name, dtype, shape, begin, end, count in entries:
        arr = np.frombuffer(data, dtype=_DTYPES[dtype], count=count, offset=begin)
        built.append(TensorEntry(name, dtype, shape, arr.astype(np.float32)))
    return TensorMap(built)


def save_checkpoint(weights: "TensorMap | Checkpoint", path) -> None:
    """Write a container file. Accepts a TensorMap or a Checkpoint."""
    if isinstance(weights, Checkpoint):
        weights = weights.weights
    Path(path).write_bytes(encode_tensor_map(weights))


def load_checkpoint(path, iteration: int = 0) -> "Checkpoint":
    """Read a container file. The iteration is supplied by the caller
    (normally from a manifest); containers do not store it."""
    return Checkpoint(iteration, decode_tensor_map(Path(path).read_bytes()))


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    weights: TensorMap

    def __post_init__(self):
        if self.iteration < 0:
            raise ManifestError(f"iteration must be non-negative, got {self.iteration}")


def _first_schema_difference(a: TensorMap, b: TensorMap) -> str:
    names = sorted(set(a.names) | set(b.names))
    for name in names:
        if name not in a or name not in b:
            return name
        if a.dtype(name) != b.dtype(name) or a.shape(name) != b.shape(name):
            return name
    return names[0] if names else "<empty>"


class CheckpointSet(Sequence[Checkpoint]):
    """Checkpoints with strictly increasing iterations and a shared schema."""

    def __init__(self, checkpoints: Iterable[Checkpoint]):
        items = tuple(checkpoints)
        if not items:
            raise ManifestError("a checkpoint set needs at least one checkpoint")
        schema = items[0].weights.schema()
        for k, ckpt in enumerate(items):
            if k > 0 and ckpt.iteration <= items[k - 1].iteration:
                raise ManifestError(
                    f"iterations must be strictly increasing: checkpoint {k} has "
                    f"iteration {ckpt.iteration} after {items[k - 1].iteration}"
                )
            if ckpt.weights.schema() != schema:
                name = _first_schema_difference(items[0].weights, ckpt.weights)
                raise ManifestError(
                    f"schema mismatch at checkpoint {k} (iteration {ckpt.iteration}): "
                    f"first differing tensor {name!r}"
                )
        self._items = items
        self._stacks: dict[str, np.ndarray] = {}

    @property
    def schema(self) -> tuple[tuple[str, str, tuple[int, ...]], ...]:
        return self._items[0].weights.schema()

    @property
    def iterations(self) -> tuple[int, ...]:
        return tuple(c.iteration for c in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, idx):
        return self._items[idx]

    def stacked(self, name: str) -> np.ndarray:
        """(K, n_elements) float32 matrix of one tensor across the set.

        Built lazily and cached; the computation is pure so a benign race
        between concurrent readers is harmless.
        """
        cached = self._stacks.get(name)
        if cached is None:
            cached = np.stack([c.weights[name].reshape(-1) for c in self._items])
            cached.flags.writeable = False
            self._stacks[name] = cached
        return cached


@dataclass(frozen=True)
class LoraCheckpoint:
    """Low-rank adapter checkpoint: per-target (B, A) factor pairs.

    B is (d_out, r), A is (r, d_in); the dense update for a target is B @ A.
    """

    iteration: int
    pairs: Mapping[str, tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        if self.iteration < 0:
            raise ManifestError(f"iteration must be non-negative, got {self.iteration}")
        fixed = {}
        for target, (b, a) in self.pairs.items():
            b = _as_f32(b)
            a = _as_f32(a)
            if b.ndim != 2 or a.ndim != 2:
                raise ManifestError(f"target {target!r}: B and A must be 2-D")
            if b.shape[1] != a.shape[0]:
                raise ManifestError(
                    f"target {target!r}: rank mismatch, B is {b.shape} but A is {a.shape}"
                )
            b.flags.writeable = False
            a.flags.writeable = False
            fixed[target] = (b, a)
        object.__setattr__(self, "pairs", fixed)

    def schema(self) -> tuple[tuple[str, tuple[int, ...], tuple[int, ...]], ...]:
        return tuple(
            (target, self.pairs[target][0].shape, self.pairs[target][1].shape)
            for target in sorted(self.pairs)
        )


class LoraCheckpointSet(Sequence[LoraCheckpoint]):
    """LoRA checkpoints sharing target names, ranks, and shapes."""

    def __init__(self, checkpoints: Iterable[LoraCheckpoint]):
        items = tuple(checkpoints)
        if not items:
            raise ManifestError("a LoRA checkpoint set needs at least one checkpoint")
        schema = items[0].schema()
        for k, ckpt in enumerate(items):
            if k > 0 and ckpt.iteration <= items[k - 1].iteration:
                raise ManifestError(
                    f"iterations must be strictly increasing: checkpoint {k} has "
                    f"iteration {ckpt.iteration} after {items[k - 1].iteration}"
                )
            if ckpt.schema() != schema:
                raise ManifestError(
                    f"LoRA schema mismatch at checkpoint {k} (iteration {ckpt.iteration})"
                )
        self._items = items

    @property
    def targets(self) -> tuple[str, ...]:
        return tuple(t for t, _, _ in self._items[0].schema())

    @property
    def iterations(self) -> tuple[int, ...]:
        return tuple(c.iteration for c in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, idx):
        return self._items[idx]


def load_manifest(path) -> tuple[str, list[tuple[int, Path]]]:
    """Read a manifest and return (kind, [(iteration, absolute path), ...])."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest {path}: invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"manifest {path}: top level must be an object")
    kind = raw.get("kind")
    if kind not in ("dense", "lora"):
        raise ManifestError(f"manifest {path}: kind must be 'dense' or 'lora', got {kind!r}")
    checkpoints = raw.get("checkpoints")
    if not isinstance(checkpoints, list) or not checkpoints:
        raise ManifestError(f"manifest {path}: checkpoints must be a non-empty list")
    out = []
    for i, item in enumerate(checkpoints):
        if not isinstance(item, dict) or "iteration" not in item or "path" not in item:
            raise ManifestError(f"manifest {path}: entry {i} needs iteration and path")
        iteration = item["iteration"]
        if not isinstance(iteration, int) or isinstance(iteration, bool) or iteration < 0:
            raise ManifestError(f"manifest {path}: entry {i} has bad iteration {iteration!r}")
        out.append((iteration, (path.parent / item["path"]).resolve()))
    return kind, out


def load_set(manifest_path) -> CheckpointSet:
    """Load a dense checkpoint set described by a manifest."""
    kind, entries = load_manifest(manifest_path)
    if kind != "dense":
        raise ManifestError(f"manifest {manifest_path}: expected kind 'dense', got {kind!r}")
    return CheckpointSet(load_checkpoint(p, iteration=it) for it, p in entries)


def _lora_pairs_from_map(tensors: TensorMap, origin: str) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    factors: dict[str, dict[str, np.ndarray]] = {}
    for entry in tensors.entries():
        if entry.name.endswith(_LORA_B_SUFFIX):
            target, part = entry.name[: -len(_LORA_B_SUFFIX)], "B"
        elif entry.name.endswith(_LORA_A_SUFFIX):
            target, part = entry.name[: -len(_LORA_A_SUFFIX)], "A"
        else:
            raise ManifestError(
                f"{origin}: tensor {entry.name!r} is not a '*{_LORA_B_SUFFIX}' or '*{_LORA_A_SUFFIX}' factor"
            )
        factors.setdefault(target, {})[part] = entry.data
    pairs = {}
    for target, parts in factors.items():
        if set(parts) != {"B", "A"}:
            raise ManifestError(f"{origin}: target {target!r} is missing a B or A factor")
        pairs[target] = (parts["B"], parts["A"])
    if not pairs:
        raise ManifestError(f"{origin}: container holds no LoRA factors")
    return pairs


def load_lora_set(manifest_path) -> LoraCheckpointSet:
    """Load a LoRA checkpoint set (kind 'lora') from a manifest."""
    kind, entries = load_manifest(manifest_path)
    if kind != "lora":
        raise ManifestError(f"manifest {manifest_path}: expected kind 'lora', got {kind!r}")
    loaded = []
    for iteration, path in entries:
        tensors = decode_tensor_map(Path(path).read_bytes())
        loaded.append(LoraCheckpoint(iteration, _lora_pairs_from_map(tensors, str(path))))
    return LoraCheckpointSet(loaded)


def select_window(
    checkpoints: CheckpointSet, end_iter: int, window: int, interval: int
) -> CheckpointSet:
    """Keep checkpoints with iteration in (end_iter - window, end_iter] that
    are congruent to end_iter modulo interval."""
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    if interval <= 0:
        raise ValueError(f"interval must be positive, got {interval}")
    kept = [
        c
        for c in checkpoints
        if end_iter - window < c.iteration <= end_iter
        and (end_iter - c.iteration) % interval == 0
    ]
    if not kept:
        raise EmptyWindowError(
            f"no checkpoints in (end_iter - window, end_iter] = ({end_iter - window}, {end_iter}] "
            f"congruent to {end_iter} mod {interval}"
        )
    return CheckpointSet(kept)
