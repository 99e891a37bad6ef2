"""Evolutionary search over checkpoint-combination coefficients.

The population holds coefficient vectors scored by an evaluator (lower is
better). Each epoch freezes the current population, takes the best
``parent_pool`` individuals, and generates ``offspring_per_epoch`` children:
two parents sampled uniformly with replacement, crossover (whole-parent copy
with probability ``whole_parent_prob``, otherwise a per-position mix), then
iid Gaussian mutation of every stored value. Offspring join the population
only after the full batch is scored, so the per-epoch best never regresses.

Determinism does not depend on evaluation order: the random stream for
offspring ``i`` of epoch ``e`` is derived from ``(seed, e, i)``, and only
evaluator calls run on the thread pool. Fitness results are cached on the
exact coefficient bytes; whole-parent copies in particular are free repeats.

The search starts from the EMA baseline: one individual per ``init_rates``
entry, carrying the practice-form EMA coefficients of that rate. Coefficients
are unconstrained in sign, so the search is free to leave the convex hull of
the checkpoints; only the sum-to-one constraint is maintained (structurally
in difference form, by renormalization in direct form).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .containers import CheckpointSet, LoraCheckpointSet, TensorMap
from .merging import (
    CoefficientVector,
    DegenerateCoefficientsError,
    EmaConfig,
    combine,
    combine_lora,
    ema_coefficients,
    DEFAULT_EMA_RATES,
)

__all__ = [
    "SearchConfig",
    "Individual",
    "SearchState",
    "SearchResult",
    "SearchError",
    "crossover",
    "mutate",
    "initialize",
    "run_search",
    "MAX_SPAWN_ATTEMPTS",
]

# Give up on an offspring slot after this many degenerate draws in a row.
MAX_SPAWN_ATTEMPTS = 100


class SearchError(RuntimeError):
    """Search aborted; carries the failing epoch/offspring context."""


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 50
    offspring_per_epoch: int = 40
    parent_pool: int = 25
    mutation_sigma: float = 0.01
    whole_parent_prob: float = 0.5
    init_rates: tuple[float, ...] = DEFAULT_EMA_RATES
    formulation: str = "difference"
    clip_above_one: bool = False
    seed: int = 0
    parallelism: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.offspring_per_epoch < 1:
            raise ValueError(f"offspring_per_epoch must be at least 1, got {self.offspring_per_epoch}")
        if self.parent_pool < 1:
            raise ValueError(f"parent_pool must be at least 1, got {self.parent_pool}")
        if self.mutation_sigma < 0:
            raise ValueError(f"mutation_sigma must be non-negative, got {self.mutation_sigma}")
        if not (0.0 <= self.whole_parent_prob <= 1.0):
            raise ValueError(f"whole_parent_prob must lie in [0, 1], got {self.whole_parent_prob}")
        if not self.init_rates:
            raise ValueError("init_rates must be non-empty")
        if self.formulation not in ("difference", "direct"):
            raise ValueError(f"unknown formulation {self.formulation!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be at least 1, got {self.parallelism}")
        object.__setattr__(self, "init_rates", tuple(self.init_rates))


@dataclass(frozen=True)
class Individual:
    coefficients: CoefficientVector
    fitness: float
    birth_index: int


@dataclass
class SearchState:
    """Mutable bookkeeping while a search runs."""

    population: list[Individual] = field(default_factory=list)
    seed: int = 0
    cache: dict[bytes, float] = field(default_factory=dict)
    evaluations: int = 0
    cache_hits: int = 0


@dataclass(frozen=True)
class SearchResult:
    best: Individual
    history: tuple[float, ...]
    initial_fitnesses: tuple[float, ...]
    evaluations: int
    cache_hits: int
    wall_time_secs: float
    population_size: int


def _fitness_rank(ind: Individual) -> tuple[float, int]:
    # birth index breaks exact ties, so ordering is total and reproducible
    return (ind.fitness, ind.birth_index)


def _merge(checkpoints, coefficients: CoefficientVector) -> TensorMap:
    if isinstance(checkpoints, LoraCheckpointSet):
        return combine_lora(checkpoints, coefficients)
    return combine(checkpoints, coefficients)


def _to_formulation(direct_vector: CoefficientVector, formulation: str) -> CoefficientVector:
    full = direct_vector.full()
    if formulation == "direct":
        return CoefficientVector("direct", full)
    return CoefficientVector.difference(full[1:])


def crossover(
    a: CoefficientVector,
    b: CoefficientVector,
    rng: np.random.Generator,
    whole_parent_prob: float = 0.5,
) -> CoefficientVector:
    """Mix two parents position-wise, or copy one of them verbatim."""
    if a.formulation != b.formulation or len(a.values) != len(b.values):
        raise ValueError(
            f"parents disagree: {a.formulation}[{len(a.values)}] vs {b.formulation}[{len(b.values)}]"
        )
    if rng.random() < whole_parent_prob:
        return a if rng.random() < 0.5 else b
    take_a = rng.random(len(a.values)) < 0.5
    mixed = np.where(take_a, a.values, b.values)
    if a.formulation == "direct":
        return CoefficientVector.direct(mixed)
    return CoefficientVector.difference(mixed)


def mutate(
    c: CoefficientVector,
    sigma: float,
    clip_above_one: bool,
    rng: np.random.Generator,
) -> CoefficientVector:
    """Add iid Gaussian noise to every stored value."""
    values = c.values + rng.normal(0.0, sigma, size=len(c.values))
    if clip_above_one:
        values = np.minimum(values, 1.0)
    if c.formulation == "direct":
        return CoefficientVector.direct(values)
    return CoefficientVector.difference(values)


def _offspring_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(epoch, index)))


def _spawn_offspring(
    parents: Sequence[Individual],
    cfg: SearchConfig,
    rng: np.random.Generator,
) -> CoefficientVector:
    """Sample parents and produce one child, retrying degenerate draws."""
    mother = parents[int(rng.integers(len(parents)))].coefficients
    father = parents[int(rng.integers(len(parents)))].coefficients
    for _ in range(MAX_SPAWN_ATTEMPTS):
        try:
            child = crossover(mother, father, rng, cfg.whole_parent_prob)
            return mutate(child, cfg.mutation_sigma, cfg.clip_above_one, rng)
        except DegenerateCoefficientsError:
            continue
    raise SearchError(
        f"gave up after {MAX_SPAWN_ATTEMPTS} degenerate offspring in a row "
        "(direct-form coefficient sums kept collapsing to zero)"
    )


def initialize(checkpoints, cfg: SearchConfig, evaluator: Callable[[TensorMap], float]) -> SearchState:
    """Seed the population with one EMA-coefficient individual per init rate."""
    k = len(checkpoints)
    if k < 2:
        raise ValueError(f"search needs at least 2 checkpoints, got {k}")
    state = SearchState(seed=cfg.seed)
    for rate in cfg.init_rates:
        direct = ema_coefficients(k, EmaConfig(rate, "practice"))
        coeffs = _to_formulation(direct, cfg.formulation)
        try:
            fitness = _evaluate_cached(state, checkpoints, coeffs, evaluator)
        except Exception as exc:
            raise SearchError(f"evaluator failed on the EMA initializer at rate {rate}: {exc}") from exc
        state.population.append(Individual(coeffs, fitness, len(state.population)))
    return state


def _evaluate_cached(state: SearchState, checkpoints, coeffs, evaluator) -> float:
    key = coeffs.key()
    if key in state.cache:
        state.cache_hits += 1
        return state.cache[key]
    fitness = float(evaluator(_merge(checkpoints, coeffs)))
    state.cache[key] = fitness
    state.evaluations += 1
    return fitness


def run_search(
    checkpoints,
    cfg: SearchConfig,
    evaluator: Callable[[TensorMap], float],
) -> SearchResult:
    """Full search: EMA initialization plus ``cfg.epochs`` offspring batches.

    Returns the best individual, the per-epoch best-fitness history, and the
    evaluation/cache counters. Identical configs give identical results at
    any parallelism level.
    """
    started = time.perf_counter()
    state = initialize(checkpoints, cfg, evaluator)
    initial_fitnesses = tuple(ind.fitness for ind in state.population)
    history: list[float] = []
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        for epoch in range(cfg.epochs):
            ranked = sorted(state.population, key=_fitness_rank)
            parents = ranked[: min(cfg.parent_pool, len(ranked))]
            batch: list[CoefficientVector] = []
            for i in range(cfg.offspring_per_epoch):
                rng = _offspring_rng(cfg.seed, epoch, i)
                batch.append(_spawn_offspring(parents, cfg, rng))

            # Cache-first dispatch; one evaluator call per distinct vector.
            futures: dict[bytes, object] = {}
            for coeffs in batch:
                key = coeffs.key()
                if key not in state.cache and key not in futures:
                    merged = _merge(checkpoints, coeffs)
                    futures[key] = pool.submit(evaluator, merged)
            for i, coeffs in enumerate(batch):
                key = coeffs.key()
                if key in state.cache:
                    state.cache_hits += 1
                    fitness = state.cache[key]
                else:
                    try:
                        fitness = float(futures[key].result())
                    except Exception as exc:
                        raise SearchError(
                            f"evaluator failed at epoch {epoch}, offspring {i}, "
                            f"coefficients {coeffs.full().tolist()}: {exc}"
                        ) from exc
                    state.cache[key] = fitness
                    state.evaluations += 1
                    del futures[key]
                state.population.append(Individual(coeffs, fitness, len(state.population)))
            history.append(min(ind.fitness for ind in state.population))

    best = min(state.population, key=_fitness_rank)
    return SearchResult(
        best=best,
        history=tuple(history),
        initial_fitnesses=initial_fitnesses,
        evaluations=state.evaluations,
        cache_hits=state.cache_hits,
        wall_time_secs=time.perf_counter() - started,
        population_size=len(state.population),
    )
