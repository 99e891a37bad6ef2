"""Evaluator commands that plug into checkpoint-search tooling over its
process contract: read one checkpoint file, print one JSON metric line.

The package is deliberately standalone.  It ships its own minimal reader
and writer for the tensor container format so that nothing here imports
the search toolkit; the two sides meet only at the file format and the
command line.
"""

from evaluator_bridge.containers import ContainerFormatError, read_tensors, write_tensors
from evaluator_bridge.generator import (
    SchemaMismatch,
    ToyGeneratorSpec,
    affine_match_weights,
    ensure_assets,
    expected_schema,
    forward,
    validate_weights,
)
from evaluator_bridge.wasserstein import (
    empirical_stats,
    gaussian_w2_squared,
    sample_distance_squared,
)

__all__ = [
    "ContainerFormatError",
    "read_tensors",
    "write_tensors",
    "SchemaMismatch",
    "ToyGeneratorSpec",
    "affine_match_weights",
    "ensure_assets",
    "expected_schema",
    "forward",
    "validate_weights",
    "empirical_stats",
    "gaussian_w2_squared",
    "sample_distance_squared",
]
