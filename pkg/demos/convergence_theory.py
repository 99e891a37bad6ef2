"""Numerical check of the convergence guarantees on the quadratic testbed.

Runs a batch of noisy SGD trajectories with the 1/(c*n) step size, then
compares seed-averaged suboptimality gaps against the proved bounds: the
log(N)/N bound for the last iterate and the rate-dependent bound for the
geometric (EMA) average. Note the EMA bound's residual term: it scales
with (1 - rate) and does not vanish as N grows, which is why the gap and
its bound stay far apart at low rates.

Also runs the non-membership scan: strict mixtures of three points taken
from one EMA family stay measurably off every other EMA trajectory.
"""

from lcsc.sgd_sim import SimConfig, check_hull_exclusion, evaluate_bounds


def main() -> None:
    cfg = SimConfig(dim=10, curvature=1.0, noise_bound=5.0, iters=5_000, seeds=40)
    rates = (0.9, 0.99, 0.999)
    stats = evaluate_bounds(cfg, rates)

    print(f"dim {cfg.dim}, iters {cfg.iters}, {cfg.seeds} seeds")
    print(f"last iterate: gap {stats.last_iter_gap:.3e}  bound {stats.bound_last:.3e}")
    for rate in rates:
        gap = stats.ema_gaps[rate]
        bound = stats.bound_ema[rate]
        print(f"EMA rate {rate}: gap {gap:.3e}  bound {bound:.3e}  (ratio {gap / bound:.2e})")

    distance = check_hull_exclusion(k=6, dim=20, rate=0.99, trials=30, grid_points=2_000, seed=0)
    print(f"mixture-vs-trajectory minimum relative distance: {distance:.3e}")


if __name__ == "__main__":
    main()
