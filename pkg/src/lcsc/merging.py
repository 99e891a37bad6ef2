"""Linear combination arithmetic over checkpoint sets.

A merged model is a weighted sum over the checkpoints of a set. Coefficients
come in two formulations:

* ``direct``: one coefficient per checkpoint, constrained to sum to 1
  (renormalized on construction when requested).
* ``difference``: K-1 free values for checkpoints 2..K; the combination is
  theta_1 + sum_i a_i (theta_i - theta_1), so the implied first coefficient
  is 1 - sum(a) and the sum-to-one constraint holds automatically.

Negative coefficients are allowed in both formulations; merged points may
leave the convex hull of the checkpoints.

All weighted sums accumulate in float64 and round to float32 at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .containers import CheckpointSet, LoraCheckpointSet, TensorEntry, TensorMap

__all__ = [
    "CoefficientError",
    "DegenerateCoefficientsError",
    "EvaluationFailure",
    "CoefficientVector",
    "EmaConfig",
    "combine",
    "combine_lora",
    "ema_coefficients",
    "ema_recurrence",
    "ema_sweep",
    "ema_grid",
    "DEFAULT_EMA_RATES",
]

# Direct-form coefficient sums closer to zero than this cannot be renormalized.
DEGENERATE_SUM_TOL = 1e-6

# Rates swept by default when an EMA baseline is requested without an
# explicit grid.
DEFAULT_EMA_RATES = (0.9, 0.99, 0.999, 0.9999, 0.99995, 0.99999)

FORMULATIONS = ("difference", "direct")


class CoefficientError(ValueError):
    """Bad coefficient vector: wrong length, non-finite, or unknown form."""


class DegenerateCoefficientsError(CoefficientError):
    """Direct-form coefficients whose sum is too close to zero to normalize."""


class EvaluationFailure(RuntimeError):
    """An evaluator raised while scoring a merged model."""


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    """Coefficients in one of the two formulations.

    ``values`` holds K floats for direct form, K-1 for difference form.
    ``normalizer`` records the sum divided out when direct-form values were
    renormalized (1.0 when no normalization happened).
    """

    formulation: str
    values: np.ndarray
    normalizer: float = 1.0

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise CoefficientError(f"unknown formulation {self.formulation!r}")
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise CoefficientError(f"values must be 1-D, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise CoefficientError("coefficients must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def direct(cls, values, normalize: bool = True) -> "CoefficientVector":
        vals = np.asarray(values, dtype=np.float64)
        if normalize:
            total = float(np.sum(vals))
            if abs(total) < DEGENERATE_SUM_TOL:
                raise DegenerateCoefficientsError(
                    f"direct coefficients sum to {total:.3e}, cannot renormalize"
                )
            return cls("direct", vals / total, normalizer=total)
        return cls("direct", vals)

    @classmethod
    def difference(cls, values) -> "CoefficientVector":
        return cls("difference", values)

    def set_size(self) -> int:
        """Number of checkpoints this vector combines."""
        if self.formulation == "direct":
            return len(self.values)
        return len(self.values) + 1

    def full(self, k: int | None = None) -> np.ndarray:
        """Expand to one coefficient per checkpoint (always sums to ~1)."""
        if k is not None and self.set_size() != k:
            raise CoefficientError(
                f"{self.formulation} coefficients for {self.set_size()} checkpoints "
                f"cannot combine a set of {k}"
            )
        if self.formulation == "direct":
            return np.array(self.values)
        return np.concatenate([[1.0 - float(np.sum(self.values))], self.values])

    def key(self) -> bytes:
        """Canonical bytes identifying this exact vector (fitness-cache key)."""
        tag = b"d" if self.formulation == "difference" else b"D"
        return tag + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, CoefficientVector):
            return NotImplemented
        return self.formulation == other.formulation and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        return f"CoefficientVector({self.formulation}, {self.values.tolist()})"


@dataclass(frozen=True)
class EmaConfig:
    """Exponential moving average settings.

    ``practice`` starts the average at the first checkpoint and folds
    theta <- rate * theta + (1 - rate) * checkpoint over the rest, the form
    training code ships. ``theory`` is the normalized geometric weighting
    (1/A) * sum_n rate^(K-n) * theta_n with A the weight sum. The two agree
    only once rate^K is negligible.
    """

    rate: float
    form: str = "practice"

    def __post_init__(self):
        if not (0.0 < self.rate < 1.0):
            raise CoefficientError(f"EMA rate must lie in (0, 1), got {self.rate}")
        if self.form not in ("practice", "theory"):
            raise CoefficientError(f"unknown EMA form {self.form!r}")


def ema_coefficients(k: int, cfg: EmaConfig) -> CoefficientVector:
    """Direct-form coefficient vector equivalent to a K-checkpoint EMA."""
    if k < 1:
        raise CoefficientError(f"need at least one checkpoint, got k={k}")
    rate = cfg.rate
    if cfg.form == "practice":
        weights = np.empty(k, dtype=np.float64)
        weights[0] = rate ** (k - 1)
        for i in range(1, k):
            weights[i] = (1.0 - rate) * rate ** (k - 1 - i)
        return CoefficientVector("direct", weights)
    powers = rate ** np.arange(k - 1, -1, -1, dtype=np.float64)
    total = float(np.sum(powers))
    return CoefficientVector("direct", powers / total, normalizer=total)


def _output_like(checkpoints: CheckpointSet, flat_by_name: dict[str, np.ndarray]) -> TensorMap:
    entries = []
    for name, dtype, shape in checkpoints.schema:
        arr = flat_by_name[name].astype(np.float32).reshape(shape)
        entries.append(TensorEntry(name, dtype, shape, arr))
    return TensorMap(entries)


def combine(checkpoints: CheckpointSet, coefficients: CoefficientVector) -> TensorMap:
    """Weighted sum of a checkpoint set under either formulation."""
    full = coefficients.full(len(checkpoints))
    out = {}
    for name, _, _ in checkpoints.schema:
        stacked = checkpoints.stacked(name)
        out[name] = full @ stacked
    return _output_like(checkpoints, out)


def ema_recurrence(checkpoints: CheckpointSet, cfg: EmaConfig) -> TensorMap:
    """EMA of a set computed by the literal fold, not via coefficients."""
    rate = cfg.rate
    out = {}
    for name, _, _ in checkpoints.schema:
        stacked = checkpoints.stacked(name)
        if cfg.form == "practice":
            acc = stacked[0].astype(np.float64)
            for row in stacked[1:]:
                acc = rate * acc + (1.0 - rate) * row
        else:
            acc = np.zeros(stacked.shape[1], dtype=np.float64)
            total = 0.0
            for row in stacked:
                acc = rate * acc + row
                total = rate * total + 1.0
            acc /= total
        out[name] = acc
    return _output_like(checkpoints, out)


def ema_sweep(
    checkpoints: CheckpointSet,
    rates,
    evaluator: Callable[[TensorMap], float],
    form: str = "practice",
) -> list[tuple[float, float]]:
    """Evaluate the EMA at each rate; returns (rate, fitness) pairs in order."""
    rates = list(rates)
    if not rates:
        raise CoefficientError("rate grid must be non-empty")
    results = []
    for rate in rates:
        merged = ema_recurrence(checkpoints, EmaConfig(rate, form))
        try:
            fitness = float(evaluator(merged))
        except Exception as exc:
            raise EvaluationFailure(f"evaluator failed at EMA rate {rate}: {exc}") from exc
        results.append((rate, fitness))
    return results


def ema_grid(
    checkpoints: CheckpointSet,
    rates,
    evaluator: Callable[[TensorMap], float],
    form: str = "practice",
) -> tuple[float, float]:
    """Best EMA rate on a grid; ties break toward the smaller rate."""
    results = ema_sweep(checkpoints, rates, evaluator, form)
    best_rate, best_fitness = min(results, key=lambda rf: (rf[1], rf[0]))
    return best_rate, best_fitness


def combine_lora(checkpoints: LoraCheckpointSet, coefficients: CoefficientVector) -> TensorMap:
    """Weighted sum of dense LoRA products: per target, sum_i a_i B_i A_i.

    Output tensors are the dense per-target deltas, named by target.
    """
    full = coefficients.full(len(checkpoints))
    entries = []
    for target in checkpoints.targets:
        d_out = checkpoints[0].pairs[target][0].shape[0]
        d_in = checkpoints[0].pairs[target][1].shape[1]
        acc = np.zeros((d_out, d_in), dtype=np.float64)
        for weight, ckpt in zip(full, checkpoints):
            b, a = ckpt.pairs[target]
            acc += weight * (b.astype(np.float64) @ a.astype(np.float64))
        entries.append(TensorEntry(target, "F32", (d_out, d_in), acc.astype(np.float32)))
    return TensorMap(entries)
