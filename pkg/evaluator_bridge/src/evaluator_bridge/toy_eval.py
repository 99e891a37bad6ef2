"""Command-line evaluator for toy generator checkpoints.

Usage: ``toy-eval --assets DIR CHECKPOINT``

Reads one checkpoint, runs the generator on the fixed noise batch, and
prints a single JSON line ``{"metric": <float>}`` on stdout, where the
metric is the squared 2-Wasserstein distance between Gaussian fits of
the generated and reference clouds.  Assets are created under DIR on
first use and reused verbatim afterwards, so repeated evaluations of the
same checkpoint print identical bytes.

Exit codes: 0 on success, 2 when the checkpoint is malformed or does not
match the generator schema, 3 when the metric comes out non-finite.
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from evaluator_bridge.containers import ContainerFormatError, read_tensors
from evaluator_bridge.generator import SchemaMismatch, ensure_assets, forward, validate_weights
from evaluator_bridge.wasserstein import sample_distance_squared

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_METRIC = 3


def _error(kind: str, message: str) -> None:
    print(f"error[{kind}]: {message}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="toy-eval", description=__doc__.splitlines()[0])
    parser.add_argument("checkpoint", help="tensor container holding the generator weights")
    parser.add_argument("--assets", required=True, help="directory of fixed noise and reference batches")
    parser.add_argument("--seed", type=int, default=0, help="seed used if the assets must be created")
    args = parser.parse_args(argv)

    spec = ensure_assets(args.assets, seed=args.seed)
    try:
        weights = read_tensors(args.checkpoint)
        validate_weights(weights, spec.hidden_dim)
    except (OSError, ContainerFormatError, SchemaMismatch) as exc:
        _error("schema", str(exc))
        return EXIT_SCHEMA

    # non-finite weights are an expected input class (a bad merge can produce
    # them), reported through the exit code, so FP warnings stay quiet here
    try:
        with np.errstate(all="ignore"):
            samples = forward(weights, spec.noise)
            metric = sample_distance_squared(samples, spec.reference)
    except np.linalg.LinAlgError:
        metric = math.nan
    if not math.isfinite(metric):
        _error("metric", f"metric is {metric}; checkpoint weights are likely non-finite")
        return EXIT_METRIC

    print(json.dumps({"metric": metric}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
