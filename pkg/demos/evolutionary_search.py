"""Evolutionary coefficient search on a fixture with a known answer.

Three scalar checkpoints at 0, 0.5, and 2 are merged to minimize the
squared distance to 1. The optimum is a point inside the span of the
checkpoints, so the search should drive fitness to ~0. A second run moves
the target to 2.5, which no convex combination can reach: the best merge
needs a negative coefficient, and the search finds it because coefficients
are unconstrained apart from summing to one.
"""

import numpy as np

from lcsc.containers import Checkpoint, CheckpointSet, TensorMap
from lcsc.evaluators import QuadraticEvaluator
from lcsc.search import SearchConfig, run_search


def scalar_set(values) -> CheckpointSet:
    return CheckpointSet(
        Checkpoint(iteration=(i + 1) * 100, weights=TensorMap({"theta": np.float32(v).reshape(())}))
        for i, v in enumerate(values)
    )


def report(tag: str, result, k: int) -> None:
    full = np.round(result.best.coefficients.full(k), 4)
    print(f"{tag}: initial best {min(result.initial_fitnesses):.6f}")
    print(f"  epochs {len(result.history)}, final fitness {result.best.fitness:.3e}")
    print(f"  coefficients {full} (sum {full.sum():.4f})")


def main() -> None:
    ckpts = scalar_set([0.0, 0.5, 2.0])
    target = TensorMap({"theta": np.float32(1.0).reshape(())})
    result = run_search(ckpts, SearchConfig(seed=0), QuadraticEvaluator(target))
    report("target 1.0 (inside the span)", result, len(ckpts))

    ckpts = scalar_set([0.0, 0.5])
    target = TensorMap({"theta": np.float32(2.0).reshape(())})
    cfg = SearchConfig(seed=0, mutation_sigma=0.1)
    result = run_search(ckpts, cfg, QuadraticEvaluator(target))
    report("target 2.0 (needs a negative coefficient)", result, len(ckpts))


if __name__ == "__main__":
    main()
