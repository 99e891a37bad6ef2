"""SGD on a strongly convex quadratic: trajectories and convergence bounds.

The testbed objective is f(theta) = (curvature / 2) * ||theta - theta*||^2
with theta* at the origin. Steps follow theta_n = theta_{n-1} - eta_n * g_n
with eta_n = 1 / (curvature * n) and g_n the gradient at theta_{n-1} plus
isotropic Gaussian noise, rescaled whenever its norm exceeds ``noise_bound``
so the second-moment assumption E||g||^2 <= noise_bound^2 holds by
construction. The start point is drawn uniformly from the ball of radius
noise_bound / curvature around theta*.

Three claims about this process are checked numerically:

* the last iterate satisfies a suboptimality bound of order log(N)/N,
* the geometrically weighted (EMA) average satisfies a bound whose residual
  term (1 - rate) * noise_bound^2 / curvature does not vanish with N, and
* strict convex combinations of three EMA-trajectory points are not
  themselves on any EMA trajectory, checked by a dense grid scan over rates.

The third check runs in coefficient space: every candidate point is a fixed
linear combination of the base checkpoints, so distances reduce to quadratic
forms under the Gram matrix of the checkpoint vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .containers import Checkpoint, CheckpointSet, TensorMap

__all__ = [
    "SimConfig",
    "BoundCheck",
    "TrajectoryStats",
    "noise_sigma",
    "gradient_sample",
    "run_trajectory",
    "evaluate_bounds",
    "check_last_iterate_bound",
    "check_averaged_bound",
    "averaged_bound",
    "ema_weight_matrix",
    "check_hull_exclusion",
]


@dataclass(frozen=True)
class SimConfig:
    dim: int = 10
    curvature: float = 1.0
    noise_bound: float = 5.0
    iters: int = 10_000
    seeds: int = 100
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be at least 1, got {self.dim}")
        if self.curvature <= 0:
            raise ValueError(f"curvature must be positive, got {self.curvature}")
        if self.noise_bound <= 0:
            raise ValueError(f"noise_bound must be positive, got {self.noise_bound}")
        if self.iters < 1:
            raise ValueError(f"iters must be at least 1, got {self.iters}")
        if self.seeds < 1:
            raise ValueError(f"seeds must be at least 1, got {self.seeds}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be at least 1, got {self.checkpoint_every}")


@dataclass(frozen=True)
class BoundCheck:
    gap: float
    bound: float
    holds: bool
    rate: float | None = None


@dataclass(frozen=True)
class TrajectoryStats:
    """Seed-averaged suboptimality gaps with the corresponding bounds."""

    last_iter_gap: float
    ema_gaps: dict[float, float]
    bound_last: float
    bound_ema: dict[float, float]


def noise_sigma(cfg: SimConfig) -> float:
    """Per-component noise scale; puts half the squared budget into noise."""
    return cfg.noise_bound / math.sqrt(2.0 * cfg.dim)


def _clip_rows(g: np.ndarray, bound: float) -> np.ndarray:
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    scale = np.where(norms > bound, bound / np.maximum(norms, 1e-300), 1.0)
    return g * scale


def gradient_sample(theta: np.ndarray, cfg: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Noisy gradient with norm capped at noise_bound."""
    g = cfg.curvature * theta + rng.normal(0.0, noise_sigma(cfg), size=theta.shape)
    return _clip_rows(g, cfg.noise_bound)


def _initial_points(cfg: SimConfig, rng: np.random.Generator, count: int) -> np.ndarray:
    """Uniform draws from the ball of radius noise_bound / curvature."""
    direction = rng.normal(size=(count, cfg.dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = (cfg.noise_bound / cfg.curvature) * rng.random(count) ** (1.0 / cfg.dim)
    return direction * radius[:, None]


def run_trajectory(
    cfg: SimConfig,
    seed: int,
    theta0: np.ndarray | None = None,
    with_noise: bool = True,
) -> CheckpointSet:
    """One SGD run, recorded as a checkpoint set.

    Checkpoints are taken at iteration 0 and every ``checkpoint_every``
    steps after that, stored as a single tensor named "theta".
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    if theta0 is None:
        theta = _initial_points(cfg, rng, 1)[0]
    else:
        theta = np.asarray(theta0, dtype=np.float64).copy()
        if theta.shape != (cfg.dim,):
            raise ValueError(f"theta0 must have shape ({cfg.dim},), got {theta.shape}")
    sigma = noise_sigma(cfg) if with_noise else 0.0

    recorded = [Checkpoint(0, TensorMap({"theta": theta.astype(np.float32)}))]
    for n in range(1, cfg.iters + 1):
        g = cfg.curvature * theta
        if sigma > 0.0:
            g = g + rng.normal(0.0, sigma, size=cfg.dim)
        g = _clip_rows(g, cfg.noise_bound)
        theta = theta - g / (cfg.curvature * n)
        if n % cfg.checkpoint_every == 0:
            recorded.append(Checkpoint(n, TensorMap({"theta": theta.astype(np.float32)})))
    return CheckpointSet(recorded)


def evaluate_bounds(cfg: SimConfig, rates=(), base_seed: int = 0) -> TrajectoryStats:
    """Run cfg.seeds trajectories (vectorized) and compare gaps to bounds.

    ``rates`` selects the EMA rates whose theory-form average over iterates
    1..N is tracked online alongside the last iterate.
    """
    rates = tuple(rates)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=base_seed, spawn_key=(cfg.seeds,)))
    theta = _initial_points(cfg, rng, cfg.seeds)
    sigma = noise_sigma(cfg)

    ema_acc = {rate: np.zeros_like(theta) for rate in rates}
    ema_norm = {rate: 0.0 for rate in rates}
    for n in range(1, cfg.iters + 1):
        g = cfg.curvature * theta + rng.normal(0.0, sigma, size=theta.shape)
        g = _clip_rows(g, cfg.noise_bound)
        theta = theta - g / (cfg.curvature * n)
        for rate in rates:
            ema_acc[rate] = rate * ema_acc[rate] + theta
            ema_norm[rate] = rate * ema_norm[rate] + 1.0

    def gap_of(points: np.ndarray) -> float:
        return float(np.mean(0.5 * cfg.curvature * np.sum(points * points, axis=1)))

    ema_gaps = {rate: gap_of(ema_acc[rate] / ema_norm[rate]) for rate in rates}
    return TrajectoryStats(
        last_iter_gap=gap_of(theta),
        ema_gaps=ema_gaps,
        bound_last=last_iterate_bound(cfg),
        bound_ema={rate: averaged_bound(cfg, rate) for rate in rates},
    )


def last_iterate_bound(cfg: SimConfig) -> float:
    """Suboptimality bound for the final iterate: 17 G^2 (1 + ln N) / (c N)."""
    g, c, n = cfg.noise_bound, cfg.curvature, cfg.iters
    return 17.0 * g * g * (1.0 + math.log(n)) / (c * n)


def _rate_horizon(rate: float) -> int:
    """Smallest j with rate^(j/2) <= 1/e, i.e. ceil(-1 / ln(sqrt(rate)))."""
    return math.ceil(-1.0 / math.log(math.sqrt(rate)))


def averaged_bound(cfg: SimConfig, rate: float) -> float:
    """Suboptimality bound for the theory-form EMA point at ``rate``.

    Only valid for iters strictly above the rate horizon; note the residual
    term (1 - rate) * G^2 / c that does not decay with N.
    """
    if not (0.0 < rate < 1.0):
        raise ValueError(f"rate must lie in (0, 1), got {rate}")
    n = cfg.iters
    horizon = _rate_horizon(rate)
    if n <= horizon:
        raise ValueError(f"iters={n} must exceed the rate horizon {horizon} for rate={rate}")
    g, c = cfg.noise_bound, cfg.curvature
    j = np.arange(1, horizon)
    v = float(np.sum((1.0 - rate) / (rate**j * j))) - (1.0 - rate) / rate**horizon
    tail = 1.0 - rate ** (n - 1)
    return (g * g / c) * (
        1.0 / (rate * tail * (n + 1)) + v * rate**n / (2.0 * tail) + (1.0 - rate)
    )


def check_last_iterate_bound(cfg: SimConfig, base_seed: int = 0) -> BoundCheck:
    stats = evaluate_bounds(cfg, (), base_seed=base_seed)
    return BoundCheck(stats.last_iter_gap, stats.bound_last, stats.last_iter_gap <= stats.bound_last)


def check_averaged_bound(cfg: SimConfig, rate: float, base_seed: int = 0) -> BoundCheck:
    stats = evaluate_bounds(cfg, (rate,), base_seed=base_seed)
    gap, bound = stats.ema_gaps[rate], stats.bound_ema[rate]
    return BoundCheck(gap, bound, gap <= bound, rate=rate)


def ema_weight_matrix(k: int, rate: float) -> np.ndarray:
    """Row n (0-based) holds the practice-form EMA weights after n folds.

    Row n combines checkpoints 0..n: weight rate^n on checkpoint 0 and
    (1 - rate) * rate^(n - m) on checkpoint m for 1 <= m <= n.
    """
    weights = np.zeros((k, k))
    for n in range(k):
        weights[n, 0] = rate**n
        for m in range(1, n + 1):
            weights[n, m] = (1.0 - rate) * rate ** (n - m)
    return weights


def _grid_weight_matrices(k: int, grid: np.ndarray) -> list[np.ndarray]:
    """For each trajectory index n, practice-form weights for every grid rate."""
    powers = grid[:, None] ** np.arange(k)[None, :]  # powers[:, j] = rate^j
    per_index = []
    for n in range(k):
        w = np.zeros((len(grid), k))
        w[:, 0] = powers[:, n]
        for m in range(1, n + 1):
            w[:, m] = (1.0 - grid) * powers[:, n - m]
        per_index.append(w)
    return per_index


def check_hull_exclusion(
    k: int = 10,
    dim: int = 50,
    rate: float = 0.99,
    trials: int = 100,
    grid_points: int = 10_000,
    seed: int = 0,
    max_condition: float = 1e8,
    mix_margin: float = 0.15,
) -> float:
    """Min relative distance from convex mixes of EMA points to any EMA trajectory.

    Each trial draws k Gaussian checkpoints (redrawn while badly conditioned),
    forms the rate-EMA trajectory, mixes three of its points (indices past the
    first, strict convex weights), and scans rates over a dense grid measuring
    the closest trajectory point. Returns the minimum over all trials of
    ||mix - trajectory point|| / ||mix||.

    Mix weights are drawn uniformly from the simplex conditioned on every
    weight being at least ``mix_margin``. As a weight approaches 1 the mix
    collapses onto a single trajectory point and the distance tends to zero
    continuously, so a margin of zero would measure how close the sampler got
    to that degenerate limit instead of the generic separation; the boundary
    limit itself is exercised separately with explicit near-vertex weights.
    """
    if k < 4:
        raise ValueError(f"need at least 4 checkpoints to pick three mix indices, got k={k}")
    if not (0.0 <= mix_margin < 1.0 / 3.0):
        raise ValueError(f"mix_margin must lie in [0, 1/3), got {mix_margin}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    grid = np.linspace(0.001, 0.999, grid_points)
    candidates = _grid_weight_matrices(k, grid)
    trajectory = ema_weight_matrix(k, rate)

    overall = math.inf
    for _ in range(trials):
        while True:
            base = rng.normal(size=(dim, k))
            if np.linalg.cond(base) <= max_condition:
                break
        gram = base.T @ base
        picks = np.sort(rng.choice(np.arange(1, k), size=3, replace=False))
        # affine map of a uniform simplex draw = uniform on {c : min c_i >= margin}
        mix = mix_margin + (1.0 - 3.0 * mix_margin) * rng.dirichlet(np.ones(3))
        combo = mix @ trajectory[picks]
        combo_norm = math.sqrt(float(combo @ gram @ combo))

        best_sq = math.inf
        for w in candidates:
            diff = w - combo
            dist_sq = np.einsum("ij,ij->i", diff @ gram, diff)
            best_sq = min(best_sq, float(dist_sq.min()))
        overall = min(overall, math.sqrt(max(best_sq, 0.0)) / combo_norm)
    return overall
