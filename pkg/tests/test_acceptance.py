"""End-to-end guarantees of the toolkit, one test per shipped claim.

Every test here pins a user-facing behavior at an explicit tolerance and a
wall-clock budget, so `pytest tests/test_acceptance.py -v` reads as a pass or
fail line per guarantee. Tolerances are asserted exactly as stated; nothing
is loosened to make a line green. One known-red line is kept deliberately:
see test_high_rate_average_strictly_beats_last_iterate.
"""

import json
import math
import struct
import time

import numpy as np
import pytest

from lcsc.cli import main
from lcsc.containers import (
    Checkpoint,
    CheckpointSet,
    ContainerError,
    LoraCheckpoint,
    LoraCheckpointSet,
    TensorMap,
    decode_tensor_map,
    encode_tensor_map,
    save_checkpoint,
)
from lcsc.evaluators import QuadraticEvaluator
from lcsc.landscape import GridSpec, plane_point, sweep
from lcsc.merging import (
    DEFAULT_EMA_RATES,
    CoefficientVector,
    EmaConfig,
    combine,
    combine_lora,
    ema_coefficients,
    ema_recurrence,
    ema_sweep,
)
from lcsc.search import SearchConfig, run_search
from lcsc.sgd_sim import SimConfig, check_hull_exclusion, evaluate_bounds, run_trajectory

from conftest import random_checkpoint_set, random_tensor_map, scalar_checkpoint

# the two search-optimality tests share a single 2-minute budget
SEARCH_TIMES: dict[str, float] = {}


@pytest.fixture(scope="module")
def bound_stats():
    """One 100-seed simulation at the published scale, shared by the bound tests."""
    t0 = time.perf_counter()
    cfg = SimConfig(dim=10, curvature=1.0, noise_bound=5.0, iters=10_000, seeds=100)
    stats = evaluate_bounds(cfg, (0.9, 0.99, 0.999))
    return stats, time.perf_counter() - t0


def test_average_coefficients_match_recurrence():
    # closed-form coefficient route vs the fold-one-at-a-time route
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240816)
    for k in (1, 3, 10, 400):
        ckpts = random_checkpoint_set(rng, k)
        for rate in (0.9, 0.999):
            cfg = EmaConfig(rate, "practice")
            via_coefficients = combine(ckpts, ema_coefficients(k, cfg))
            via_recurrence = ema_recurrence(ckpts, cfg)
            for name in via_recurrence.names:
                np.testing.assert_allclose(
                    via_coefficients[name], via_recurrence[name], rtol=1e-6, atol=1e-9
                )
    assert time.perf_counter() - t0 < 5.0


def test_last_iterate_gap_within_theory_bound(bound_stats):
    stats, elapsed = bound_stats
    g, beta, n = 5.0, 1.0, 10_000
    oracle = 17.0 * g * g * (1.0 + math.log(n)) / (beta * n)
    assert stats.bound_last == pytest.approx(oracle, rel=1e-12)
    assert stats.last_iter_gap <= stats.bound_last
    assert elapsed < 30.0


def test_averaged_gap_within_theory_bound_at_each_rate(bound_stats):
    stats, elapsed = bound_stats
    g, beta, n = 5.0, 1.0, 10_000
    for rate in (0.9, 0.99, 0.999):
        horizon = math.ceil(-1.0 / math.log(math.sqrt(rate)))
        v = sum((1.0 - rate) / (rate**j * j) for j in range(1, horizon)) - (
            1.0 - rate
        ) / rate**horizon
        tail = 1.0 - rate ** (n - 1)
        oracle = (g * g / beta) * (
            1.0 / (rate * tail * (n + 1)) + v * rate**n / (2.0 * tail) + (1.0 - rate)
        )
        assert stats.bound_ema[rate] == pytest.approx(oracle, rel=1e-9)
        assert stats.ema_gaps[rate] <= stats.bound_ema[rate]
    assert elapsed < 60.0


def test_high_rate_average_strictly_beats_last_iterate(bound_stats):
    # Known red. With the 1/(curvature*n) schedule on this quadratic the last
    # iterate telescopes to the uniform average of the injected noise, which
    # is the variance-optimal weighting, so no exponential reweighting can
    # undercut it. The strict ordering is asserted anyway because it is the
    # shipped claim; the measured values document how it actually lands.
    stats, _ = bound_stats
    ema, last = stats.ema_gaps[0.999], stats.last_iter_gap
    assert ema < last, (
        f"0.999-rate averaged gap {ema:.6e} is not strictly below the "
        f"last-iterate gap {last:.6e}; the last iterate here is already the "
        "uniform (variance-optimal) average of the noise, so every "
        "exponential weighting carries at least as much variance"
    )


def test_strict_mixtures_stay_off_every_average_trajectory():
    t0 = time.perf_counter()
    min_distance = check_hull_exclusion(
        k=10, dim=50, rate=0.99, trials=100, grid_points=10_000, seed=0
    )
    assert min_distance > 1e-3
    assert time.perf_counter() - t0 < 60.0


def test_search_reaches_quadratic_optimum_on_scalar_fixture():
    t0 = time.perf_counter()
    ckpts = CheckpointSet(
        [scalar_checkpoint(0.0, 100), scalar_checkpoint(0.5, 200), scalar_checkpoint(2.0, 300)]
    )
    evaluator = QuadraticEvaluator(TensorMap({"theta": np.float32(1.0)}), curvature=2.0)
    result = run_search(ckpts, SearchConfig(seed=0), evaluator)
    SEARCH_TIMES["scalar"] = time.perf_counter() - t0
    assert result.best.fitness <= 1e-4
    assert list(result.history) == sorted(result.history, reverse=True)


def test_search_beats_single_and_average_baselines():
    t0 = time.perf_counter()
    traj_cfg = SimConfig(
        dim=10, curvature=1.0, noise_bound=5.0, iters=10_000, seeds=1, checkpoint_every=100
    )
    evaluator = QuadraticEvaluator(TensorMap({"theta": np.zeros(10, dtype=np.float32)}))
    search_cfg = dict(
        epochs=250,
        offspring_per_epoch=24,
        parent_pool=2,
        # a near-zero rate folds down to the last checkpoint, so the
        # population starts at the strongest single checkpoint's level
        init_rates=DEFAULT_EMA_RATES + (1e-9,),
    )

    strict_wins = 0
    margins = []
    for seed in range(100):
        trajectory = run_trajectory(traj_cfg, seed)
        best_single = min(evaluator(c.weights) for c in trajectory)
        best_average = min(f for _, f in ema_sweep(trajectory, DEFAULT_EMA_RATES, evaluator))
        baseline = min(best_single, best_average)
        result = run_search(trajectory, SearchConfig(seed=seed, **search_cfg), evaluator)
        assert list(result.history) == sorted(result.history, reverse=True)
        margins.append(baseline - result.best.fitness)
        if result.best.fitness < baseline:
            strict_wins += 1

    SEARCH_TIMES["trajectory"] = time.perf_counter() - t0
    assert min(margins) >= 0.0, f"search lost to a baseline by {-min(margins):.3e}"
    assert strict_wins >= 90, f"strict wins {strict_wins}/100"
    assert SEARCH_TIMES["trajectory"] + SEARCH_TIMES.get("scalar", 0.0) < 120.0


def test_search_needs_negative_coefficient_to_hit_target():
    t0 = time.perf_counter()
    ckpts = CheckpointSet([scalar_checkpoint(0.0, 100), scalar_checkpoint(0.5, 200)])
    evaluator = QuadraticEvaluator(TensorMap({"theta": np.float32(2.0)}), curvature=2.0)
    result = run_search(ckpts, SearchConfig(seed=0, mutation_sigma=0.1), evaluator)
    full = result.best.coefficients.full(2)
    assert result.best.fitness <= 1e-3
    assert full[0] < 0.0, f"expected a negative coefficient, got {full}"
    assert time.perf_counter() - t0 < 10.0


def test_plane_sweep_matches_direct_combination():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    anchors = random_checkpoint_set(rng, 3)
    target = TensorMap(
        {name: rng.standard_normal(anchors[0].weights[name].shape).astype(np.float32)
         for name in anchors[0].weights.names}
    )
    evaluator = QuadraticEvaluator(target)
    grid = GridSpec((0.0, 1.0, 21), (0.0, 1.0, 21))
    rows = sweep(anchors[0], anchors[1], anchors[2], grid, evaluator)
    assert len(rows) == 21 * 21
    for x, y, metric in rows:
        direct = CoefficientVector.direct([1.0 - x - y, x, y])
        expected = evaluator(combine(anchors, direct))
        assert metric == pytest.approx(expected, rel=1e-6, abs=1e-6)

    c0, c1, c2 = anchors[0], anchors[1], anchors[2]
    assert plane_point(c0, c1, c2, 0.0, 0.0) == c0.weights
    assert plane_point(c0, c1, c2, 1.0, 0.0) == c1.weights
    assert plane_point(c0, c1, c2, 0.0, 1.0) == c2.weights
    assert time.perf_counter() - t0 < 5.0


def test_history_monotone_and_coefficient_bytes_reproducible(tmp_path):
    t0 = time.perf_counter()
    for i, value in enumerate((0.0, 0.5, 2.0)):
        save_checkpoint(TensorMap({"theta": np.float32(value)}), tmp_path / f"c{i}.st")
    target = tmp_path / "target.st"
    save_checkpoint(TensorMap({"theta": np.float32(1.0)}), target)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({
        "kind": "dense",
        "checkpoints": [{"iteration": 100 * (i + 1), "path": f"c{i}.st"} for i in range(3)],
    }))
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps({
        "manifest": str(manifest),
        "evaluator": {"kind": "analytic_quadratic", "target": str(target), "curvature": 2.0},
        "search": {"epochs": 8, "offspring_per_epoch": 16, "parent_pool": 6, "seed": 5},
        "outputs": {
            "merged": str(tmp_path / "best.st"),
            "coefficients": str(tmp_path / "coeffs.json"),
            "report": str(tmp_path / "report.json"),
        },
    }))

    captured = []
    for parallelism in ("1", "8", "1"):
        assert main(["search", "--config", str(cfg_path), "--parallelism", parallelism]) == 0
        captured.append((tmp_path / "coeffs.json").read_bytes())
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["history"] == sorted(report["history"], reverse=True)
    assert captured[0] == captured[1], "worker count changed the coefficient bytes"
    assert captured[0] == captured[2], "identical reruns disagree"
    assert time.perf_counter() - t0 < 30.0


def test_low_rank_combination_matches_densified_route():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    targets = ("attn.delta", "mlp.delta")
    low_rank, dense = [], []
    for i in range(4):
        pairs = {}
        tensors = {}
        for name in targets:
            b = rng.standard_normal((8, 2)).astype(np.float32)
            a = rng.standard_normal((2, 8)).astype(np.float32)
            pairs[name] = (b, a)
            tensors[name] = (b.astype(np.float64) @ a.astype(np.float64)).astype(np.float32)
        low_rank.append(LoraCheckpoint(100 * (i + 1), pairs))
        dense.append(Checkpoint(100 * (i + 1), TensorMap(tensors)))

    vector = CoefficientVector.difference([0.4, 0.3, -0.2])
    factored = combine_lora(LoraCheckpointSet(low_rank), vector)
    densified = combine(CheckpointSet(dense), vector)
    for name in targets:
        np.testing.assert_allclose(factored[name], densified[name], rtol=1e-6, atol=1e-6)
    assert time.perf_counter() - t0 < 5.0


def test_container_round_trip_and_malformed_rejection():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    for _ in range(1000):
        original = random_tensor_map(rng)
        encoded = encode_tensor_map(original)
        decoded = decode_tensor_map(encoded)
        assert decoded == original
        assert encode_tensor_map(decoded) == encoded

    valid = encode_tensor_map(TensorMap({"w": np.arange(6, dtype=np.float32).reshape(2, 3)}))
    (header_len,) = struct.unpack("<Q", valid[:8])

    def with_header(payload: bytes, body: bytes = b"") -> bytes:
        return struct.pack("<Q", len(payload)) + payload + body

    body = valid[8 + header_len:]
    malformed = [
        b"",
        b"\x01\x02\x03",
        struct.pack("<Q", 1 << 40) + b"{}",
        with_header(b"not json at all", body),
        with_header(b"[1, 2, 3]", body),
        with_header(json.dumps({"w": "nope"}).encode(), body),
        with_header(json.dumps({"w": {"dtype": "F64", "shape": [2, 3], "data_offsets": [0, 48]}}).encode(), body),
        with_header(json.dumps({"w": {"dtype": "F32", "shape": [2, 3]}}).encode(), body),
        with_header(json.dumps({"w": {"dtype": "F32", "shape": [2, 3], "data_offsets": [0, 8]}}).encode(), body),
        with_header(json.dumps({"w": {"dtype": "F32", "shape": [2, 3], "data_offsets": [4, 28]}}).encode(), body),
        with_header(json.dumps({
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        }).encode(), b"\x00" * 12),
        valid + b"trailing",
        b'\x02\x00\x00\x00\x00\x00\x00\x00{"w": {"dtype": "F32", "shape": [], "data_offsets": [0, 4]}}' + b"\x00" * 4,
    ]
    for case in malformed:
        with pytest.raises(ContainerError) as excinfo:
            decode_tensor_map(case)
        assert str(excinfo.value)

    # random header corruption must either decode cleanly or fail with the
    # container diagnostic, never leak a parser exception
    flip_rng = np.random.default_rng(5)
    for _ in range(200):
        corrupted = bytearray(valid)
        pos = int(flip_rng.integers(0, 8 + header_len))
        corrupted[pos] ^= int(flip_rng.integers(1, 256))
        try:
            decode_tensor_map(bytes(corrupted))
        except ContainerError:
            pass
    assert time.perf_counter() - t0 < 30.0
