"""A tiny 2-D generator network and the fixed assets used to score it.

The generator maps 2-D standard-normal noise through one tanh layer plus
a linear skip connection:

    y = tanh(z @ W_h^T + b_h) @ W_o^T + b_o + z @ W_s^T

Checkpoints for it are ordinary tensor containers with five entries
(``hidden.weight``, ``hidden.bias``, ``out.weight``, ``out.bias``,
``skip.weight``).  Scoring compares the generated cloud against a
reference cloud drawn once from a known 2-D Gaussian mixture; both the
noise batch and the reference batch are persisted next to the config so
every evaluation of the same checkpoint sees identical inputs and the
metric is bit-for-bit reproducible.

The skip connection makes the family expressive enough to contain an
exact optimum: an affine map alone can match the reference mean and
covariance, which is what the metric measures.  ``affine_match_weights``
constructs that optimum in closed form; it is the anchor for tests and
for building near-optimal fixtures.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from evaluator_bridge.containers import read_tensors, write_tensors
from evaluator_bridge.wasserstein import empirical_stats

CONFIG_NAME = "config.json"
NOISE_NAME = "noise.st"
REFERENCE_NAME = "reference.st"

DEFAULT_MIXTURE = {
    "weights": [0.5, 0.3, 0.2],
    "means": [[-2.0, 0.0], [2.0, 1.0], [0.5, -2.0]],
    "covs": [
        [[0.6, 0.1], [0.1, 0.4]],
        [[0.5, -0.2], [-0.2, 0.8]],
        [[0.3, 0.0], [0.0, 0.3]],
    ],
}


class SchemaMismatch(Exception):
    """Raised when a checkpoint does not carry the generator's tensors."""


def expected_schema(hidden_dim: int) -> dict[str, tuple[int, ...]]:
    return {
        "hidden.weight": (hidden_dim, 2),
        "hidden.bias": (hidden_dim,),
        "out.weight": (2, hidden_dim),
        "out.bias": (2,),
        "skip.weight": (2, 2),
    }


def validate_weights(weights: dict[str, np.ndarray], hidden_dim: int) -> None:
    schema = expected_schema(hidden_dim)
    missing = sorted(set(schema) - set(weights))
    extra = sorted(set(weights) - set(schema))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {missing}")
        if extra:
            parts.append(f"unexpected {extra}")
        raise SchemaMismatch("checkpoint tensors do not match the generator: " + ", ".join(parts))
    for name, shape in schema.items():
        if tuple(weights[name].shape) != shape:
            raise SchemaMismatch(
                f"tensor {name!r} has shape {tuple(weights[name].shape)}, expected {shape}"
            )


def forward(weights: dict[str, np.ndarray], noise: np.ndarray) -> np.ndarray:
    """Run the generator on an (n, 2) noise batch, returning (n, 2) samples."""
    z = np.asarray(noise, dtype=np.float64)
    hidden = np.tanh(z @ weights["hidden.weight"].T.astype(np.float64) + weights["hidden.bias"])
    out = hidden @ weights["out.weight"].T.astype(np.float64) + weights["out.bias"]
    return out + z @ weights["skip.weight"].T.astype(np.float64)


@dataclass(frozen=True)
class ToyGeneratorSpec:
    """Everything an evaluation needs: sizes plus the two fixed batches."""

    hidden_dim: int
    seed: int
    noise: np.ndarray
    reference: np.ndarray


def sample_mixture(rng: np.random.Generator, n: int, mixture: dict) -> np.ndarray:
    weights = np.asarray(mixture["weights"], dtype=np.float64)
    counts = rng.multinomial(n, weights / weights.sum())
    parts = []
    for count, mean, cov in zip(counts, mixture["means"], mixture["covs"]):
        if count:
            parts.append(rng.multivariate_normal(mean, cov, size=count))
    samples = np.concatenate(parts, axis=0)
    rng.shuffle(samples, axis=0)
    return samples


def _write_atomic(path: Path, writer) -> None:
    tmp = path.with_name(f"{path.name}.tmp-{os.getpid()}")
    writer(tmp)
    os.replace(tmp, path)


def ensure_assets(
    assets_dir: str | Path,
    *,
    seed: int = 0,
    hidden_dim: int = 16,
    noise_batch: int = 2048,
    reference_batch: int = 2048,
    mixture: dict | None = None,
) -> ToyGeneratorSpec:
    """Load the fixed assets from ``assets_dir``, creating them if absent.

    Creation is atomic per file (write-then-rename), so concurrent first
    evaluations of the same directory settle on identical bytes: the
    content is a pure function of the config.
    """
    assets_dir = Path(assets_dir)
    config_path = assets_dir / CONFIG_NAME
    if config_path.exists():
        config = json.loads(config_path.read_text(encoding="utf-8"))
        noise = read_tensors(assets_dir / NOISE_NAME)["noise"].astype(np.float64)
        reference = read_tensors(assets_dir / REFERENCE_NAME)["reference"].astype(np.float64)
        return ToyGeneratorSpec(
            hidden_dim=int(config["hidden_dim"]),
            seed=int(config["seed"]),
            noise=noise,
            reference=reference,
        )

    mixture = DEFAULT_MIXTURE if mixture is None else mixture
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((noise_batch, 2))
    reference = sample_mixture(rng, reference_batch, mixture)
    config = {
        "format_version": 1,
        "seed": seed,
        "hidden_dim": hidden_dim,
        "noise_batch": noise_batch,
        "reference_batch": reference_batch,
        "mixture": mixture,
    }

    assets_dir.mkdir(parents=True, exist_ok=True)
    _write_atomic(
        assets_dir / NOISE_NAME,
        lambda p: write_tensors(p, {"noise": noise.astype(np.float32)}),
    )
    _write_atomic(
        assets_dir / REFERENCE_NAME,
        lambda p: write_tensors(p, {"reference": reference.astype(np.float32)}),
    )
    _write_atomic(
        config_path,
        lambda p: p.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8"),
    )
    # read back so float32 rounding matches what later evaluations will see
    return ensure_assets(assets_dir)


def _inv_psd_sqrt(mat: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh((mat + mat.T) / 2.0)
    if np.any(eigvals <= 0):
        raise ValueError("covariance is not positive definite")
    return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def affine_match_weights(spec: ToyGeneratorSpec) -> dict[str, np.ndarray]:
    """Weights whose output matches the reference mean and covariance exactly.

    With the tanh path silenced (zero hidden and output weights) the
    generator is the affine map ``y = W_s z + b_o``.  Choosing
    ``W_s = S_ref^1/2 C_z^-1/2`` and ``b_o = mu_ref - W_s mu_z`` makes the
    empirical statistics of the output equal those of the reference, so
    the Gaussian-fit distance is zero up to float32 rounding.
    """
    mu_z, cov_z = empirical_stats(spec.noise)
    mu_ref, cov_ref = empirical_stats(spec.reference)
    skip = _psd_sqrt(cov_ref) @ _inv_psd_sqrt(cov_z)
    bias = mu_ref - skip @ mu_z
    h = spec.hidden_dim
    return {
        "hidden.weight": np.zeros((h, 2), dtype=np.float32),
        "hidden.bias": np.zeros((h,), dtype=np.float32),
        "out.weight": np.zeros((2, h), dtype=np.float32),
        "out.bias": bias.astype(np.float32),
        "skip.weight": skip.astype(np.float32),
    }
