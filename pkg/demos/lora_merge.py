"""Merging low-rank adapter checkpoints without densifying first.

Each checkpoint stores (B, A) factor pairs per target layer. Combining the
set under one coefficient vector can either densify every B @ A product and
then sum, or sum in factored form per target. The library does the latter;
this demo checks it against the densify-first route and shows the output
schema (dense per-target deltas).
"""

import numpy as np

from lcsc.containers import LoraCheckpoint, LoraCheckpointSet
from lcsc.merging import CoefficientVector, combine_lora


def random_adapter(rng, iteration: int, rank: int = 2) -> LoraCheckpoint:
    pairs = {}
    for target in ("attn.delta", "mlp.delta"):
        b = rng.normal(0.0, 0.2, (6, rank)).astype(np.float32)
        a = rng.normal(0.0, 0.2, (rank, 6)).astype(np.float32)
        pairs[target] = (b, a)
    return LoraCheckpoint(iteration=iteration, pairs=pairs)


def main() -> None:
    rng = np.random.default_rng(0)
    adapters = LoraCheckpointSet(random_adapter(rng, (i + 1) * 50) for i in range(3))
    coefficients = CoefficientVector("difference", np.array([0.5, 0.3]))
    full = coefficients.full(len(adapters))
    print(f"{len(adapters)} adapter checkpoints, targets {adapters.targets}")
    print(f"coefficients {np.round(full, 3)}")

    merged = combine_lora(adapters, coefficients)
    for target in merged.names:
        dense = sum(
            c * (adapters[i].pairs[target][0].astype(np.float64) @ adapters[i].pairs[target][1])
            for i, c in enumerate(full)
        )
        diff = float(np.max(np.abs(np.asarray(merged[target], np.float64) - dense)))
        print(f"  {target}: shape {merged[target].shape}, factored-vs-dense max diff {diff:.2e}")


if __name__ == "__main__":
    main()
