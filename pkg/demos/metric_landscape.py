"""Sweep the metric over the plane spanned by three checkpoints.

Every point (x, y) is the combination (1-x-y) * c0 + x * c1 + y * c2. The
demo evaluates an 11x11 grid against a quadratic metric whose optimum sits
strictly inside the triangle, then renders the values as a coarse ASCII
map (darker is better) next to the raw numbers for the middle row.
"""

import numpy as np

from lcsc.containers import Checkpoint, TensorMap
from lcsc.evaluators import QuadraticEvaluator
from lcsc.landscape import GridSpec, sweep

SHADES = "@%#*+=-:. "  # best to worst


def checkpoint(values, iteration) -> Checkpoint:
    return Checkpoint(iteration=iteration, weights=TensorMap({"w": np.asarray(values, np.float32)}))


def main() -> None:
    c0 = checkpoint([0.0, 0.0], 100)
    c1 = checkpoint([1.0, 0.0], 200)
    c2 = checkpoint([0.0, 1.0], 300)
    target = TensorMap({"w": np.array([0.3, 0.4], np.float32)})
    grid = GridSpec(x_range=(-0.25, 1.25, 11), y_range=(-0.25, 1.25, 11))

    rows = sweep(c0, c1, c2, grid, QuadraticEvaluator(target))
    values = np.array([f for _, _, f in rows]).reshape(11, 11)

    lo, hi = values.min(), values.max()
    print(f"fitness range [{lo:.4f}, {hi:.4f}], grid x,y in [-0.25, 1.25]")
    # highest y printed first so the map reads like a plot
    for row in values[::-1]:
        scaled = (row - lo) / (hi - lo)
        line = "".join(SHADES[min(int(s * len(SHADES)), len(SHADES) - 1)] for s in scaled)
        print("   " + line)
    mid = values[5]
    print("middle row (y=0.5):", np.array2string(mid, precision=3, floatmode="fixed"))
    x_best, y_best, f_best = min(rows, key=lambda r: r[2])
    print(f"best grid point: x={x_best:.2f} y={y_best:.2f} fitness {f_best:.4f}")


if __name__ == "__main__":
    main()
