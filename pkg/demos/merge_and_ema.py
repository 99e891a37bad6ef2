"""Combining a checkpoint set three ways: hand-picked coefficients, the
EMA fold, and the EMA expressed as one linear combination.

The point to take away: every EMA is just a coefficient vector, so anything
tuned by hand or by search lives in the same space the EMA baselines do.
"""

import numpy as np

from lcsc.containers import Checkpoint, CheckpointSet, TensorMap
from lcsc.merging import (
    CoefficientVector,
    EmaConfig,
    combine,
    ema_coefficients,
    ema_recurrence,
)


def drifting_set(k: int, seed: int = 0) -> CheckpointSet:
    """K checkpoints of a toy 2-tensor model random-walking toward zero."""
    rng = np.random.default_rng(seed)
    weights = {"layer.weight": rng.normal(0.0, 1.0, (4, 4)), "layer.bias": rng.normal(0.0, 1.0, 4)}
    checkpoints = []
    for i in range(k):
        weights = {name: 0.7 * w + rng.normal(0.0, 0.05, w.shape) for name, w in weights.items()}
        tensors = TensorMap({name: w.astype(np.float32) for name, w in weights.items()})
        checkpoints.append(Checkpoint(iteration=(i + 1) * 100, weights=tensors))
    return CheckpointSet(checkpoints)


def norm(tensors: TensorMap) -> float:
    total = sum(np.sum(np.asarray(tensors[name], np.float64) ** 2) for name in tensors.names)
    return float(np.sqrt(total))


def main() -> None:
    ckpts = drifting_set(5)
    print(f"checkpoint set: {len(ckpts)} checkpoints, iterations {ckpts.iterations}")

    uniform = CoefficientVector("direct", np.full(5, 0.2))
    print(f"uniform average        norm {norm(combine(ckpts, uniform)):.4f}")

    last_heavy = CoefficientVector("difference", np.array([0.1, 0.1, 0.2, 0.4]))
    full = last_heavy.full(5)
    print(f"hand-picked {np.round(full, 2)}  norm {norm(combine(ckpts, last_heavy)):.4f}")

    for rate in (0.9, 0.99):
        cfg = EmaConfig(rate=rate, form="practice")
        folded = ema_recurrence(ckpts, cfg)
        as_coefficients = combine(ckpts, ema_coefficients(5, cfg))
        agree = max(
            float(np.max(np.abs(np.asarray(folded[name], np.float64) - as_coefficients[name])))
            for name in folded.names
        )
        coeffs = np.round(ema_coefficients(5, cfg).values, 4)
        print(f"EMA rate {rate}: coefficients {coeffs}, fold-vs-coefficients max diff {agree:.2e}")


if __name__ == "__main__":
    main()
