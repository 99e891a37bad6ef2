"""Skeleton for wiring a real image-model FID evaluator into the contract.

This module documents the three stages a production evaluator needs and
where each plugs in.  It ships unconfigured: running it always fails with
a clear message so a half-wired pipeline cannot silently return scores.

To turn it into a working evaluator, implement:

1. ``load_model(checkpoint_path)``: deserialize the tensor container into
   your model object (the container holds the merged weights the search
   produced; names and shapes follow your training checkpoints).
2. ``sample_images(model, batch, seed)``: generate a fixed-seed batch.
   The seed must be constant across evaluations, mirroring how the toy
   evaluator persists one noise batch: the search assumes the metric is
   a deterministic function of the weights.
3. ``compute_fid(samples, reference_stats)``: embed the samples with your
   feature network and evaluate the Gaussian feature distance against
   precomputed reference statistics.

Then have ``main`` print ``json.dumps({"metric": fid})`` as its final
stdout line and return 0.  Keep exit code 2 for unreadable or mismatched
checkpoints and 3 for non-finite metrics.
"""

from __future__ import annotations

import argparse
import sys

EXIT_NOT_CONFIGURED = 2


def load_model(checkpoint_path: str):
    raise NotImplementedError("plug in your model deserializer here")


def sample_images(model, batch: int, seed: int):
    raise NotImplementedError("plug in your fixed-seed sampler here")


def compute_fid(samples, reference_stats) -> float:
    raise NotImplementedError("plug in your feature-statistics stage here")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fid-eval-skeleton", description=__doc__.splitlines()[0])
    parser.add_argument("checkpoint", nargs="?", help="tensor container to score")
    parser.parse_args(argv)
    print(
        "error[not-configured]: this skeleton needs a model loader, a fixed-seed sampler, "
        "and a feature-statistics stage; see the module docstring",
        file=sys.stderr,
    )
    return EXIT_NOT_CONFIGURED


if __name__ == "__main__":
    sys.exit(main())
