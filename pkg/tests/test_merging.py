import numpy as np
import pytest

from lcsc.containers import Checkpoint, CheckpointSet, LoraCheckpoint, LoraCheckpointSet, TensorMap
from lcsc.merging import (
    CoefficientError,
    CoefficientVector,
    DegenerateCoefficientsError,
    EmaConfig,
    EvaluationFailure,
    combine,
    combine_lora,
    ema_coefficients,
    ema_grid,
    ema_recurrence,
    ema_sweep,
)
from conftest import random_checkpoint_set, scalar_checkpoint


def scalar_set_of(values):
    return CheckpointSet([scalar_checkpoint(v, 100 * (i + 1)) for i, v in enumerate(values)])


class TestCoefficientVector:
    def test_direct_renormalizes_and_records_sum(self):
        cv = CoefficientVector.direct([1.0, 3.0])
        np.testing.assert_allclose(cv.values, [0.25, 0.75])
        assert cv.normalizer == 4.0

    def test_degenerate_sum_rejected(self):
        with pytest.raises(DegenerateCoefficientsError):
            CoefficientVector.direct([0.5, -0.5 + 1e-9])

    def test_difference_full_expansion(self):
        cv = CoefficientVector.difference([0.2, 0.3])
        np.testing.assert_allclose(cv.full(3), [0.5, 0.2, 0.3])
        assert abs(cv.full(3).sum() - 1.0) < 1e-12

    def test_full_checks_set_size(self):
        with pytest.raises(CoefficientError, match="cannot combine"):
            CoefficientVector.difference([0.5]).full(3)

    def test_non_finite_rejected(self):
        with pytest.raises(CoefficientError, match="finite"):
            CoefficientVector.difference([np.nan])

    def test_key_distinguishes_formulations(self):
        a = CoefficientVector.difference([0.5, 0.5])
        b = CoefficientVector.direct([0.5, 0.5], normalize=False)
        assert a.key() != b.key()
        assert a.key() == CoefficientVector.difference([0.5, 0.5]).key()


class TestCombine:
    def test_identity_coefficient_reproduces_checkpoint(self, scalar_set):
        merged = combine(scalar_set, CoefficientVector.direct([0.0, 1.0, 0.0], normalize=False))
        assert merged["theta"].item() == 0.5

    def test_hand_computed_midpoint(self):
        cs = scalar_set_of([1.0, 3.0])
        merged = combine(cs, CoefficientVector.direct([0.5, 0.5], normalize=False))
        assert merged["theta"].item() == 2.0

    def test_difference_matches_direct_expansion(self):
        rng = np.random.default_rng(11)
        cs = random_checkpoint_set(rng, k=5)
        for _ in range(20):
            tail = rng.normal(scale=0.7, size=4)
            diff = combine(cs, CoefficientVector.difference(tail))
            direct = combine(
                cs,
                CoefficientVector.direct(
                    np.concatenate([[1.0 - tail.sum()], tail]), normalize=False
                ),
            )
            for name in diff.names:
                denom = max(np.abs(direct[name]).max(), 1e-12)
                assert np.abs(diff[name] - direct[name]).max() / denom < 1e-6

    def test_linearity_in_coefficients(self):
        rng = np.random.default_rng(5)
        cs = random_checkpoint_set(rng, k=4)
        c1 = CoefficientVector.direct(rng.normal(size=4) + 1.0)
        c2 = CoefficientVector.direct(rng.normal(size=4) + 1.0)
        a, b = 0.3, 0.7
        mixed = CoefficientVector.direct(a * c1.values + b * c2.values, normalize=False)
        lhs = combine(cs, mixed)
        for name in lhs.names:
            rhs = a * combine(cs, c1)[name].astype(np.float64) + b * combine(cs, c2)[name].astype(np.float64)
            np.testing.assert_allclose(lhs[name], rhs, rtol=1e-5, atol=1e-6)

    def test_single_checkpoint_set(self):
        cs = scalar_set_of([4.0])
        assert combine(cs, CoefficientVector.direct([1.0], normalize=False))["theta"].item() == 4.0
        assert combine(cs, CoefficientVector.difference([]))["theta"].item() == 4.0

    def test_wrong_length_rejected(self, scalar_set):
        with pytest.raises(CoefficientError, match="cannot combine"):
            combine(scalar_set, CoefficientVector.direct([0.5, 0.5], normalize=False))

    def test_output_schema_and_dtype_follow_set(self):
        rng = np.random.default_rng(2)
        data = rng.standard_normal(4).astype(np.float16).astype(np.float32)
        ckpts = [
            Checkpoint(i + 1, TensorMap.from_arrays({"h": data + i}, dtypes={"h": "F16"}))
            for i in range(3)
        ]
        cs = CheckpointSet(ckpts)
        merged = combine(cs, CoefficientVector.direct([1, 1, 1]))
        assert merged.dtype("h") == "F16"
        assert merged.shape("h") == (4,)


class TestEmaCoefficients:
    def test_practice_k3(self):
        cv = ema_coefficients(3, EmaConfig(0.5, "practice"))
        np.testing.assert_allclose(cv.values, [0.25, 0.25, 0.5])

    def test_theory_k2(self):
        cv = ema_coefficients(2, EmaConfig(0.5, "theory"))
        np.testing.assert_allclose(cv.values, [1 / 3, 2 / 3])
        assert cv.normalizer == pytest.approx(1.5)

    def test_k1_is_identity(self):
        for form in ("practice", "theory"):
            np.testing.assert_allclose(ema_coefficients(1, EmaConfig(0.9, form)).values, [1.0])

    def test_sums_to_one(self):
        for k in (1, 3, 10, 400):
            for form in ("practice", "theory"):
                cv = ema_coefficients(k, EmaConfig(0.997, form))
                assert abs(cv.values.sum() - 1.0) < 1e-9

    def test_bad_rate_rejected(self):
        with pytest.raises(CoefficientError):
            EmaConfig(1.0)
        with pytest.raises(CoefficientError):
            EmaConfig(0.0)


class TestEmaRecurrence:
    def test_hand_fold(self):
        cs = scalar_set_of([0.0, 4.0, 8.0])
        out = ema_recurrence(cs, EmaConfig(0.5, "practice"))
        assert out["theta"].item() == 5.0

    def test_single_checkpoint_is_identity(self):
        cs = scalar_set_of([7.0])
        for form in ("practice", "theory"):
            assert ema_recurrence(cs, EmaConfig(0.9, form))["theta"].item() == 7.0

    @pytest.mark.parametrize("form", ["practice", "theory"])
    @pytest.mark.parametrize("k", [1, 3, 10, 1000])
    def test_matches_coefficient_route(self, form, k):
        rng = np.random.default_rng(k)
        cs = scalar_set_of(rng.standard_normal(k))
        via_fold = ema_recurrence(cs, EmaConfig(0.98, form))
        via_coeffs = combine(cs, ema_coefficients(k, EmaConfig(0.98, form)))
        a, b = via_fold["theta"].item(), via_coeffs["theta"].item()
        assert abs(a - b) <= 1e-6 * max(abs(a), abs(b), 1e-9)

    def test_forms_agree_once_rate_power_vanishes(self):
        # practice gives the first checkpoint weight rate**(K-1), theory
        # gives rate**(K-1)/A; they only coincide when rate**K is negligible.
        # Data mimics a converged trajectory (clustered, non-zero mean).
        rng = np.random.default_rng(3)
        values = 5.0 + 0.1 * rng.standard_normal(10_000)
        cs = scalar_set_of(values)
        cfg_p = ema_recurrence(cs, EmaConfig(0.999, "practice"))["theta"].item()
        cfg_t = ema_recurrence(cs, EmaConfig(0.999, "theory"))["theta"].item()
        assert abs(cfg_p - cfg_t) / max(abs(cfg_t), 1e-12) < 1e-3

    def test_forms_diverge_for_short_sets(self):
        # rate**K = 0.999**200 ~ 0.82, so the initial point dominates the
        # practice form and the two outputs differ at order one
        rng = np.random.default_rng(4)
        cs = scalar_set_of(rng.standard_normal(200))
        p = ema_recurrence(cs, EmaConfig(0.999, "practice"))["theta"].item()
        t = ema_recurrence(cs, EmaConfig(0.999, "theory"))["theta"].item()
        assert abs(p - t) / max(abs(t), 1e-12) > 0.1


def quadratic_at(target):
    def evaluate(weights: TensorMap) -> float:
        return float(sum(np.sum((weights[n].astype(np.float64) - target) ** 2) for n in weights.names))

    return evaluate


class TestEmaGrid:
    def test_picks_minimal_fitness(self):
        cs = scalar_set_of([0.0, 1.0, 2.0])
        best_rate, best_fitness = ema_grid(cs, [0.1, 0.5, 0.9], quadratic_at(2.0))
        # small rates track the last checkpoint, which sits at the target
        assert best_rate == 0.1
        sweep = ema_sweep(cs, [0.1, 0.5, 0.9], quadratic_at(2.0))
        assert best_fitness == min(f for _, f in sweep)

    def test_tie_breaks_toward_smaller_rate(self):
        cs = scalar_set_of([1.0, 1.0, 1.0])
        best_rate, _ = ema_grid(cs, [0.9, 0.2, 0.5], quadratic_at(1.0))
        assert best_rate == 0.2

    def test_empty_grid_rejected(self):
        cs = scalar_set_of([1.0])
        with pytest.raises(CoefficientError, match="non-empty"):
            ema_grid(cs, [], quadratic_at(0.0))

    def test_failure_names_offending_rate(self):
        cs = scalar_set_of([0.0, 1.0])

        def boom(weights):
            raise RuntimeError("backend down")

        with pytest.raises(EvaluationFailure, match="rate 0.5"):
            ema_grid(cs, [0.5], boom)


class TestCombineLora:
    def make_set(self, rng, k=4, d_out=8, rank=2, d_in=8):
        ckpts = []
        for i in range(k):
            pairs = {
                "blk.attn": (
                    rng.standard_normal((d_out, rank)).astype(np.float32),
                    rng.standard_normal((rank, d_in)).astype(np.float32),
                ),
                "blk.mlp": (
                    rng.standard_normal((d_out, rank)).astype(np.float32),
                    rng.standard_normal((rank, d_in)).astype(np.float32),
                ),
            }
            ckpts.append(LoraCheckpoint(100 * (i + 1), pairs))
        return LoraCheckpointSet(ckpts)

    def densified(self, lora_set):
        """Oracle route: materialize each checkpoint's dense products first."""
        dense = []
        for ckpt in lora_set:
            arrays = {
                t: (b.astype(np.float64) @ a.astype(np.float64)).astype(np.float32)
                for t, (b, a) in ckpt.pairs.items()
            }
            dense.append(Checkpoint(ckpt.iteration, TensorMap(arrays)))
        return CheckpointSet(dense)

    @pytest.mark.parametrize("formulation", ["direct", "difference"])
    def test_matches_densify_then_combine(self, formulation):
        rng = np.random.default_rng(9)
        lora_set = self.make_set(rng)
        if formulation == "direct":
            coeffs = CoefficientVector.direct(rng.normal(size=4) + 1.0)
        else:
            coeffs = CoefficientVector.difference(rng.normal(scale=0.5, size=3))
        via_lora = combine_lora(lora_set, coeffs)
        via_dense = combine(self.densified(lora_set), coeffs)
        for name in via_lora.names:
            denom = max(np.abs(via_dense[name]).max(), 1e-12)
            assert np.abs(via_lora[name] - via_dense[name]).max() / denom < 1e-6

    def test_single_checkpoint_identity(self):
        rng = np.random.default_rng(1)
        lora_set = self.make_set(rng, k=1)
        out = combine_lora(lora_set, CoefficientVector.direct([1.0], normalize=False))
        b, a = lora_set[0].pairs["blk.attn"]
        np.testing.assert_allclose(out["blk.attn"], b @ a, rtol=1e-6)
