"""Metric surface over the affine plane spanned by three checkpoints.

A point (x, y) maps to theta_0 + x*(theta_1 - theta_0) + y*(theta_2 - theta_0),
so (0,0), (1,0), (0,1) reproduce the three anchors exactly.  The sweep writes
one metric value per grid point; rendering is left to downstream tools.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .containers import (
    Checkpoint,
    ContainerError,
    TensorEntry,
    TensorMap,
    _first_schema_difference,
)
from .merging import EvaluationFailure

CSV_HEADER = ("x", "y", "metric")


@dataclass(frozen=True)
class GridSpec:
    """Inclusive (min, max, steps) ranges for both axes; steps counts grid lines."""

    x_range: tuple[float, float, int]
    y_range: tuple[float, float, int]

    def __post_init__(self):
        for axis, rng in (("x", self.x_range), ("y", self.y_range)):
            if len(rng) != 3:
                raise ValueError(f"{axis}_range must be (min, max, steps)")
            lo, hi, steps = rng
            if int(steps) != steps or steps < 2:
                raise ValueError(f"{axis} steps must be an integer >= 2, got {steps}")
            if not lo < hi:
                raise ValueError(f"{axis} range needs min < max, got ({lo}, {hi})")

    def xs(self) -> np.ndarray:
        lo, hi, steps = self.x_range
        return np.linspace(float(lo), float(hi), int(steps))

    def ys(self) -> np.ndarray:
        lo, hi, steps = self.y_range
        return np.linspace(float(lo), float(hi), int(steps))

    @property
    def point_count(self) -> int:
        return int(self.x_range[2]) * int(self.y_range[2])


def _weights_of(ckpt: "Checkpoint | TensorMap") -> TensorMap:
    return ckpt.weights if isinstance(ckpt, Checkpoint) else ckpt


def _check_shared_schema(anchors: Sequence[TensorMap]) -> None:
    schema = anchors[0].schema()
    for k, other in enumerate(anchors[1:], start=1):
        if other.schema() != schema:
            name = _first_schema_difference(anchors[0], other)
            raise ContainerError(
                f"schema mismatch at anchor {k}, first differing tensor {name!r}"
            )


def plane_point(
    c0: "Checkpoint | TensorMap",
    c1: "Checkpoint | TensorMap",
    c2: "Checkpoint | TensorMap",
    x: float,
    y: float,
) -> TensorMap:
    """Weights at plane coordinate (x, y); exact at the three basis points."""
    anchors = [_weights_of(c) for c in (c0, c1, c2)]
    _check_shared_schema(anchors)
    base, b, c = anchors
    entries = []
    for name, dtype, shape in base.schema():
        w0 = base[name].astype(np.float64)
        merged = w0 + x * (b[name] - w0) + y * (c[name] - w0)
        entries.append(TensorEntry(name, dtype, shape, merged.astype(np.float32)))
    return TensorMap(entries)


def sweep(
    c0: "Checkpoint | TensorMap",
    c1: "Checkpoint | TensorMap",
    c2: "Checkpoint | TensorMap",
    grid: GridSpec,
    evaluator: Callable[[TensorMap], float],
    parallelism: int = 1,
) -> list[tuple[float, float, float]]:
    """Evaluate every grid point; rows are row-major (y outer, x inner)."""
    anchors = [_weights_of(c) for c in (c0, c1, c2)]
    _check_shared_schema(anchors)
    if parallelism < 1:
        raise ValueError(f"parallelism must be >= 1, got {parallelism}")

    points = [
        (float(x), float(y)) for y in grid.ys() for x in grid.xs()
    ]

    def evaluate_point(xy: tuple[float, float]) -> float:
        merged = plane_point(anchors[0], anchors[1], anchors[2], *xy)
        return float(evaluator(merged))

    rows: list[tuple[float, float, float]] = []
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(evaluate_point, xy) for xy in points]
        # completion order is irrelevant; emit in submission (row-major) order
        for row_index, ((x, y), fut) in enumerate(zip(points, futures)):
            try:
                metric = fut.result()
            except Exception as err:
                raise EvaluationFailure(
                    f"evaluator failed at grid point (x={x!r}, y={y!r}), row {row_index}"
                ) from err
            rows.append((x, y, metric))
    return rows


def write_csv(rows: Sequence[tuple[float, float, float]], path) -> None:
    """Write sweep rows with an x,y,metric header; floats round-trip exactly."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for x, y, metric in rows:
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(metric))])
