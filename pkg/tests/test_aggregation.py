"""Entropy statistics, weighting strategies, and parameter averaging."""

import math

import numpy as np
import pytest

from fuda import (
    AGGREGATORS,
    AggregationWeights,
    ArchitectureSpec,
    DimensionError,
    DomainDataset,
    EntropyStats,
    ModelParams,
    ValidationError,
    aggregate,
    compute_weights,
    forward,
    init_params,
    mean_entropy,
    prediction_entropy,
    softmax,
)
from fuda.nn import zeros_like


def _stats(entropies):
    return EntropyStats([(f"c{i}", h) for i, h in enumerate(entropies)])


class TestPredictionEntropy:
    def test_uniform_is_log_c(self):
        assert prediction_entropy([0.25] * 4) == pytest.approx(1.3862943611198906, abs=1e-12)

    def test_one_hot_is_zero(self):
        assert prediction_entropy([0.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-9)

    def test_hand_value(self):
        assert prediction_entropy([0.7, 0.2, 0.1]) == pytest.approx(
            0.8018185525433373, abs=1e-12
        )

    def test_rejects_malformed(self):
        with pytest.raises(ValidationError):
            prediction_entropy([0.5, 0.6])
        with pytest.raises(ValidationError):
            prediction_entropy([-0.1, 1.1])

    def test_range(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            c = int(rng.integers(2, 12))
            probs = softmax(rng.uniform(-8, 8, size=c))
            h = prediction_entropy(probs)
            assert 0.0 <= h <= math.log(c) + 1e-12


class TestMeanEntropy:
    def _target(self, n=64, d=5, c=3, seed=0):
        rng = np.random.default_rng(seed)
        return DomainDataset("t", rng.standard_normal((n, d)), None, c)

    def test_constant_model(self):
        # Bias-only model emits one logit vector for every input.
        target = self._target()
        bias = np.array([1.0, -0.5, 0.25])
        params = ModelParams([(np.zeros((3, 5)), bias)])
        expected = prediction_entropy(softmax(bias))
        assert mean_entropy(params, target) == pytest.approx(expected, abs=1e-12)

    def test_zero_model_gives_log_c(self):
        target = self._target(c=4)
        params = zeros_like(init_params(ArchitectureSpec(5, 4, (6,)), 0))
        assert mean_entropy(params, target) == pytest.approx(math.log(4), abs=1e-12)

    def test_equals_per_sample_loop(self):
        # Oracle: unbatched sample-by-sample average.
        target = self._target(seed=3)
        params = init_params(ArchitectureSpec(5, 3, (8,)), 7)
        looped = np.mean([
            prediction_entropy(softmax(forward(params, target.features[i : i + 1])[0]))
            for i in range(len(target))
        ])
        assert mean_entropy(params, target) == pytest.approx(looped, abs=1e-12)

    def test_feature_dim_mismatch(self):
        params = init_params(ArchitectureSpec(4, 3), 0)
        with pytest.raises(DimensionError):
            mean_entropy(params, self._target(d=5))


class TestComputeWeights:
    def test_sea_equal_entropies_uniform(self):
        w = compute_weights(_stats([1.0, 1.0, 1.0]), None, "sea")
        np.testing.assert_allclose(w.weights, [1 / 3] * 3, atol=1e-15)

    def test_sea_two_client_hand_value(self):
        w = compute_weights(_stats([0.5, 1.0]), None, "sea")
        np.testing.assert_allclose(w.weights, [0.8, 0.2], atol=1e-12)
        w = compute_weights(_stats([0.5, 1.0]), None, "entropy")
        np.testing.assert_allclose(w.weights, [2 / 3, 1 / 3], atol=1e-12)

    def test_sea_three_client_hand_value(self):
        w = compute_weights(_stats([0.5, 1.0, 2.0]), None, "sea")
        np.testing.assert_allclose(
            w.weights,
            [0.7619047619047619, 0.19047619047619047, 0.047619047619047616],
            atol=1e-12,
        )

    def test_uniform_and_fedavg(self):
        w = compute_weights(_stats([0.3, 0.9]), [100, 300], "uniform")
        np.testing.assert_allclose(w.weights, [0.5, 0.5])
        w = compute_weights(_stats([0.3, 0.9]), [100, 300], "fedavg")
        np.testing.assert_allclose(w.weights, [0.25, 0.75])

    def test_fedavg_needs_counts(self):
        with pytest.raises(ValidationError):
            compute_weights(_stats([0.5, 0.5]), None, "fedavg")
        with pytest.raises(ValidationError):
            compute_weights(_stats([0.5, 0.5]), [10, 0], "fedavg")

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            compute_weights(_stats([0.5]), None, "best-client")

    def test_negative_entropy_rejected(self):
        with pytest.raises(ValidationError):
            _stats([0.5, -0.1])

    def test_entropy_floor_prevents_blowup(self):
        w = compute_weights(_stats([0.0, 1.0]), None, "sea")
        assert np.isfinite(w.weights).all()
        assert abs(w.weights.sum() - 1.0) <= 1e-12

    def test_weights_sum_to_one_and_nonnegative(self):
        rng = np.random.default_rng(1)
        for _ in range(300):
            m = int(rng.integers(1, 11))
            entropies = rng.uniform(0.01, 3.0, size=m).tolist()
            counts = rng.integers(1, 1000, size=m).tolist()
            for kind in AGGREGATORS:
                w = compute_weights(_stats(entropies), counts, kind)
                assert w.weights.min() >= 0.0
                assert abs(w.weights.sum() - 1.0) <= 1e-12

    def test_sea_closed_form_identity(self):
        # scale-by-mean, square, renormalize == w'^2 / sum(w'^2)
        rng = np.random.default_rng(2)
        for _ in range(300):
            m = int(rng.integers(2, 11))
            entropies = rng.uniform(0.05, 3.0, size=m)
            w = compute_weights(_stats(entropies.tolist()), None, "sea").weights
            inv = 1.0 / entropies
            closed = inv**2 / (inv**2).sum()
            assert np.abs(w - closed).max() <= 1e-12

    def test_lower_entropy_gets_strictly_more_weight(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            m = int(rng.integers(2, 11))
            entropies = rng.uniform(0.05, 3.0, size=m)
            for kind in ("entropy", "sea"):
                w = compute_weights(_stats(entropies.tolist()), None, kind).weights
                order = np.argsort(entropies)
                sorted_w = w[order]
                assert np.all(np.diff(sorted_w) < 0) or np.all(
                    np.diff(entropies[order]) == 0
                )

    def test_sea_amplifies_spread(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            m = int(rng.integers(2, 11))
            entropies = rng.uniform(0.05, 3.0, size=m)
            plain = compute_weights(_stats(entropies.tolist()), None, "entropy").weights
            scaled = compute_weights(_stats(entropies.tolist()), None, "sea").weights
            assert scaled.max() >= plain.max() - 1e-15
            assert scaled.min() <= plain.min() + 1e-15

    def test_clustered_entropies_collapse_to_uniform(self):
        # Entropies within a 1e-9 relative spread must give weights within
        # 1e-6 of 1/M.
        rng = np.random.default_rng(5)
        for _ in range(100):
            m = int(rng.integers(2, 11))
            base = float(rng.uniform(0.1, 2.0))
            entropies = base * (1.0 + rng.uniform(-0.5e-9, 0.5e-9, size=m))
            w = compute_weights(_stats(entropies.tolist()), None, "sea").weights
            assert np.abs(w - 1.0 / m).max() <= 1e-6


class TestAggregate:
    def _models(self, count, seed=0):
        arch = ArchitectureSpec(4, 3, (5,))
        return [init_params(arch, seed + i) for i in range(count)]

    def _weights(self, values, kind="uniform"):
        return AggregationWeights([(f"c{i}", v) for i, v in enumerate(values)], kind)

    def test_delta_weights_select_one_model(self):
        models = self._models(2)
        out = aggregate(models, self._weights([1.0, 0.0]))
        for (w, b), (ow, ob) in zip(models[0].layers, out.layers):
            np.testing.assert_array_equal(w, ow)
            np.testing.assert_array_equal(b, ob)

    def test_identical_models_fixed_point(self):
        model = self._models(1)[0]
        out = aggregate([model, model, model], self._weights([0.2, 0.5, 0.3]))
        for (w, b), (ow, ob) in zip(model.layers, out.layers):
            assert np.abs(w - ow).max() <= 1e-12
            assert np.abs(b - ob).max() <= 1e-12

    def test_scalar_linear_combination(self):
        a = ModelParams([(np.array([[1.0]]), np.zeros(1))])
        b = ModelParams([(np.array([[2.0]]), np.zeros(1))])
        out = aggregate([a, b], self._weights([0.8, 0.2]))
        assert out.layers[0][0][0, 0] == pytest.approx(1.2, abs=1e-15)

    def test_unnormalized_weights_rejected(self):
        with pytest.raises(ValidationError):
            self._weights([0.5, 0.6])

    def test_shape_mismatch_rejected(self):
        a = init_params(ArchitectureSpec(4, 3, (5,)), 0)
        b = init_params(ArchitectureSpec(4, 3, (6,)), 0)
        with pytest.raises(DimensionError):
            aggregate([a, b], self._weights([0.5, 0.5]))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(6)
        models = self._models(4, seed=10)
        entropies = rng.uniform(0.2, 2.0, size=4)
        weights = compute_weights(_stats(entropies.tolist()), None, "sea")
        global_a = aggregate(models, weights)

        perm = [2, 0, 3, 1]
        permuted_stats = EntropyStats([(f"c{i}", float(entropies[i])) for i in perm])
        permuted_weights = compute_weights(permuted_stats, None, "sea")
        np.testing.assert_allclose(
            permuted_weights.weights, weights.weights[perm], atol=1e-15
        )
        global_b = aggregate([models[i] for i in perm], permuted_weights)
        for (wa, ba), (wb, bb) in zip(global_a.layers, global_b.layers):
            assert np.abs(wa - wb).max() <= 1e-12
            assert np.abs(ba - bb).max() <= 1e-12

    def test_linear_in_each_model(self):
        # Replacing one model by s*b + t*c shifts the aggregate by exactly
        # its weighted combination: linearity slot by slot.
        arch = ArchitectureSpec(3, 2, ())
        a, b, c = (init_params(arch, s) for s in (1, 2, 3))
        s, t = 0.7, 0.5
        mixed = ModelParams([
            (s * wb + t * wc, s * bb + t * bc)
            for (wb, bb), (wc, bc) in zip(b.layers, c.layers)
        ])
        weights = self._weights([0.6, 0.4])
        lhs = aggregate([a, mixed], weights)
        rhs_b = aggregate([a, b], weights)
        rhs_c = aggregate([a, c], weights)
        for k in range(len(lhs.layers)):
            # s*rhs_b + t*rhs_c double-counts model a by (s + t - 1)*0.6.
            expect_w = (s * rhs_b.layers[k][0] + t * rhs_c.layers[k][0]
                        - (s + t - 1) * 0.6 * a.layers[k][0])
            np.testing.assert_allclose(lhs.layers[k][0], expect_w, atol=1e-12)
