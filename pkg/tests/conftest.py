import json

import numpy as np
import pytest

from lcsc.containers import Checkpoint, CheckpointSet, TensorEntry, TensorMap, save_checkpoint


def random_tensor_map(rng: np.random.Generator, max_tensors: int = 4, max_elems: int = 32) -> TensorMap:
    """Random small map with mixed dtypes, shapes including scalars and empties."""
    n_tensors = int(rng.integers(0, max_tensors + 1))
    entries = []
    names = set()
    for _ in range(n_tensors):
        while True:
            name = "".join(rng.choice(list("abcdefgh./_-0123"), size=int(rng.integers(1, 12))))
            if name not in names:
                names.add(name)
                break
        ndim = int(rng.integers(0, 4))
        shape = tuple(int(d) for d in rng.integers(0, 5, size=ndim))
        count = int(np.prod(shape)) if shape else 1
        dtype = "F16" if rng.random() < 0.3 else "F32"
        data = rng.standard_normal(count).astype(np.float32)
        if dtype == "F16":
            data = data.astype(np.float16).astype(np.float32)
        entries.append(TensorEntry(name, dtype, shape, data.reshape(shape)))
    return TensorMap(entries)


def scalar_checkpoint(value: float, iteration: int) -> Checkpoint:
    return Checkpoint(iteration, TensorMap({"theta": np.float32(value)}))


@pytest.fixture
def scalar_set():
    """Three single-scalar checkpoints at 0.0, 0.5, 2.0."""
    return CheckpointSet(
        [scalar_checkpoint(0.0, 100), scalar_checkpoint(0.5, 200), scalar_checkpoint(2.0, 300)]
    )


def random_checkpoint_set(rng: np.random.Generator, k: int, shapes=None) -> CheckpointSet:
    shapes = shapes or {"layer.weight": (3, 4), "layer.bias": (4,)}
    ckpts = []
    for i in range(k):
        arrays = {name: rng.standard_normal(shape).astype(np.float32) for name, shape in shapes.items()}
        ckpts.append(Checkpoint(100 * (i + 1), TensorMap(arrays)))
    return CheckpointSet(ckpts)


def write_manifest(tmp_path, checkpoints, kind="dense", name="manifest.json"):
    """Save containers plus a manifest into tmp_path; returns the manifest path."""
    entries = []
    for ckpt in checkpoints:
        fname = f"ckpt_{ckpt.iteration}.st"
        save_checkpoint(ckpt.weights, tmp_path / fname)
        entries.append({"iteration": ckpt.iteration, "path": fname})
    manifest = tmp_path / name
    manifest.write_text(json.dumps({"kind": kind, "checkpoints": entries}))
    return manifest
