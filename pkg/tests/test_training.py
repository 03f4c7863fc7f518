import numpy as np
import pytest

from dbnsat.maxsat import ConfigurationError, SolverConfig
from dbnsat.rbm import RbmParams, exact_log_likelihood
from dbnsat.training import (
    BatchNormState,
    DbnModel,
    PretrainConfig,
    SamplerSpec,
    SupervisedConfig,
    cross_entropy_loss,
    evaluate,
    forward,
    load_model,
    momentum_at,
    pretrain_dbn,
    pretrain_rbm,
    save_model,
    supervised_gradients,
    train_supervised,
)


def small_batch(rng, n, m):
    return (rng.random((n, m)) > 0.5).astype(float)


class TestMomentumSchedule:
    def test_default_switches_after_five(self):
        from dbnsat.training import DEFAULT_MOMENTUM_SCHEDULE as sched

        assert [momentum_at(sched, it) for it in (1, 5, 6, 50)] == [0.1, 0.1, 0.5, 0.5]

    def test_custom_schedule(self):
        sched = ((2, 0.0), (4, 0.3), (None, 0.9))
        assert momentum_at(sched, 2) == 0.0
        assert momentum_at(sched, 3) == 0.3
        assert momentum_at(sched, 100) == 0.9


class TestSamplerSpec:
    def test_rejects_unknown_kind(self):
        with pytest.raises(ConfigurationError):
            SamplerSpec(kind="metropolis")

    def test_rejects_unknown_backend(self):
        with pytest.raises(ConfigurationError):
            SamplerSpec(kind="qubo_best", backend="sat4j")


class TestPretrainRbm:
    def test_zero_iterations_is_identity(self):
        rng = np.random.default_rng(0)
        p = RbmParams.initialize(4, 3, rng)
        cfg = PretrainConfig(iterations=0)
        out, log = pretrain_rbm(p, small_batch(rng, 10, 4), cfg, rng)
        assert np.array_equal(out.weights, p.weights)
        assert log == []

    def test_exact_gradient_increases_likelihood(self):
        rng = np.random.default_rng(1)
        p = RbmParams.initialize(5, 4, rng)
        data = small_batch(rng, 30, 5)
        cfg = PretrainConfig(
            iterations=20,
            sampler=SamplerSpec(kind="exact_enumeration"),
            learning_rate=0.05,
            momentum_schedule=((None, 0.0),),
        )
        lls = [exact_log_likelihood(p, data)]
        for _ in range(cfg.iterations):
            p, _ = pretrain_rbm(p, data, PretrainConfig(
                iterations=1,
                sampler=cfg.sampler,
                learning_rate=cfg.learning_rate,
                momentum_schedule=cfg.momentum_schedule,
            ), rng)
            lls.append(exact_log_likelihood(p, data))
        diffs = np.diff(lls)
        assert diffs.min() > -1e-9

    def test_qubo_backends_agree_when_sls_finds_optimum(self):
        # With identical RNG draws the two backends only differ in how the
        # QUBO minimum is located; on tiny instances the stochastic solver
        # reliably finds the exact optimum, so the trained weights match.
        rng = np.random.default_rng(2)
        p0 = RbmParams.initialize(4, 3, rng, weight_scale=0.5)
        data = small_batch(rng, 12, 4)
        runs = {}
        for backend in ("exact", "sls"):
            cfg = PretrainConfig(
                iterations=3,
                sampler=SamplerSpec(kind="qubo_best", backend=backend),
            )
            out, _ = pretrain_rbm(p0, data, cfg, np.random.default_rng(7))
            runs[backend] = out
        assert np.allclose(runs["exact"].weights, runs["sls"].weights, atol=1e-9)

    def test_solve_weight_logged_for_qubo_only(self):
        rng = np.random.default_rng(3)
        p = RbmParams.initialize(3, 3, rng)
        data = small_batch(rng, 8, 3)
        _, log_cd = pretrain_rbm(
            p, data, PretrainConfig(iterations=1), np.random.default_rng(0)
        )
        assert log_cd[0]["solve_weight"] is None
        _, log_q = pretrain_rbm(
            p,
            data,
            PretrainConfig(iterations=1, sampler=SamplerSpec(kind="qubo_best")),
            np.random.default_rng(0),
        )
        assert log_q[0]["solve_weight"] >= 0.0

    def test_exact_sampler_capacity_guard(self):
        rng = np.random.default_rng(4)
        p = RbmParams.initialize(16, 16, rng)
        cfg = PretrainConfig(iterations=1, sampler=SamplerSpec(kind="exact_enumeration"))
        with pytest.raises(ConfigurationError):
            pretrain_rbm(p, small_batch(rng, 4, 16), cfg, rng)

    def test_minibatch_does_more_updates(self):
        rng = np.random.default_rng(5)
        p = RbmParams.initialize(4, 3, rng)
        data = small_batch(rng, 20, 4)
        full, _ = pretrain_rbm(
            p, data, PretrainConfig(iterations=1), np.random.default_rng(1)
        )
        mini, _ = pretrain_rbm(
            p, data, PretrainConfig(iterations=1, mini_batch=5), np.random.default_rng(1)
        )
        assert not np.allclose(full.weights, mini.weights)


class TestPretrainDbn:
    def test_layer_shapes_and_head_untouched(self):
        rng = np.random.default_rng(6)
        model = DbnModel.initialize((6, 4, 3), rng, num_classes=10)
        data = small_batch(rng, 15, 6)
        out, logs = pretrain_dbn(model, data, PretrainConfig(iterations=2), rng)
        assert [l.weights.shape for l in out.layers] == [(4, 6), (3, 4)]
        assert len(logs) == 2 and all(len(l) == 2 for l in logs)
        assert np.array_equal(out.output_weights, model.output_weights)

    def test_training_changes_every_layer(self):
        rng = np.random.default_rng(7)
        model = DbnModel.initialize((5, 4, 3), rng)
        data = small_batch(rng, 15, 5)
        out, _ = pretrain_dbn(model, data, PretrainConfig(iterations=2), rng)
        for before, after in zip(model.layers, out.layers):
            assert not np.allclose(before.weights, after.weights)


class TestForward:
    def _model(self, rng, sizes=(4, 3, 3), classes=3):
        return DbnModel.initialize(sizes, rng, num_classes=classes, weight_scale=0.5)

    def test_probabilities_normalized(self):
        rng = np.random.default_rng(8)
        model = self._model(rng)
        probs, _ = forward(model, rng.random((6, 4)), SupervisedConfig())
        assert probs.shape == (6, 3)
        assert np.all(probs > 0)
        assert np.allclose(probs.sum(axis=1), 1.0)

    def test_single_vector_promoted(self):
        rng = np.random.default_rng(9)
        model = self._model(rng)
        probs, _ = forward(model, rng.random(4), SupervisedConfig())
        assert probs.shape == (1, 3)

    def test_batch_norm_normalizes_preactivations(self):
        rng = np.random.default_rng(10)
        model = self._model(rng)
        cfg = SupervisedConfig(activation="relu", batch_norm=True)
        bn = BatchNormState.for_model(model)
        _, caches = forward(model, rng.random((50, 4)), cfg, bn, mode="train")
        for cache in caches["layers"]:
            assert np.allclose(cache["zhat"].mean(axis=0), 0.0, atol=1e-10)
            assert np.allclose(cache["zhat"].std(axis=0), 1.0, atol=1e-2)

    def test_batch_norm_train_needs_two_samples(self):
        rng = np.random.default_rng(11)
        model = self._model(rng)
        cfg = SupervisedConfig(batch_norm=True)
        bn = BatchNormState.for_model(model)
        with pytest.raises(ConfigurationError):
            forward(model, rng.random((1, 4)), cfg, bn, mode="train")
        forward(model, rng.random((1, 4)), cfg, bn, mode="inference")

    def test_cross_entropy_uniform(self):
        probs = np.full((4, 10), 0.1)
        assert cross_entropy_loss(probs, [0, 3, 5, 9]) == pytest.approx(np.log(10))


class TestGradients:
    @pytest.mark.parametrize("activation", ["sigmoid", "relu"])
    @pytest.mark.parametrize("batch_norm", [False, True])
    def test_finite_difference(self, activation, batch_norm):
        rng = np.random.default_rng(12)
        model = DbnModel.initialize((5, 4, 3), rng, num_classes=3, weight_scale=0.5)
        cfg = SupervisedConfig(activation=activation, batch_norm=batch_norm)
        bn = BatchNormState.for_model(model) if batch_norm else None
        batch = rng.random((8, 5))
        labels = rng.integers(0, 3, 8)
        grads, _, _ = supervised_gradients(model, batch, labels, cfg, bn)

        def loss_at(layer_idx, r, c, eps):
            m2 = DbnModel(
                [RbmParams(l.weights.copy(), l.visible_bias, l.hidden_bias.copy())
                 for l in model.layers],
                model.output_weights.copy(),
                model.output_bias.copy(),
            )
            m2.layers[layer_idx].weights[r, c] += eps
            probs, _ = forward(m2, batch, cfg, bn, mode="train")
            return cross_entropy_loss(probs, labels)

        h = 1e-5
        for li in range(2):
            for r, c in [(0, 0), (1, 2)]:
                fd = (loss_at(li, r, c, h) - loss_at(li, r, c, -h)) / (2 * h)
                g = grads[f"w{li}"][r, c]
                denom = max(abs(fd) + abs(g), 1e-6)
                assert abs(fd - g) / denom < 1e-4


class TestTrainSupervised:
    def test_overfits_tiny_dataset(self):
        rng = np.random.default_rng(13)
        model = DbnModel.initialize((4, 6, 6), rng, num_classes=2, weight_scale=0.5)
        x = np.array([[1, 0, 0, 0], [0, 0, 0, 1]] * 4, dtype=float)
        y = np.array([0, 1] * 4)
        cfg = SupervisedConfig(iterations=300, mini_batch=8, learning_rate=0.5)
        trained, bn, losses = train_supervised(model, x, y, cfg, rng)
        assert losses[-1] < 0.05
        assert evaluate(trained, x, y, cfg, bn) == 1.0

    def test_loss_generally_decreases(self):
        rng = np.random.default_rng(14)
        model = DbnModel.initialize((6, 5, 5), rng, num_classes=3, weight_scale=0.5)
        x = rng.random((30, 6))
        y = x[:, :3].argmax(axis=1)  # learnable labels
        cfg = SupervisedConfig(iterations=50, mini_batch=10)
        _, _, losses = train_supervised(model, x, y, cfg, rng)
        assert losses[-1] < losses[0]

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(15)
        model = DbnModel.initialize((4, 3, 3), rng, num_classes=2)
        x, y = rng.random((12, 4)), rng.integers(0, 2, 12)
        cfg = SupervisedConfig(iterations=5, mini_batch=4)
        a, _, la = train_supervised(model, x, y, cfg, np.random.default_rng(9))
        b, _, lb = train_supervised(model, x, y, cfg, np.random.default_rng(9))
        assert la == lb
        assert np.array_equal(a.output_weights, b.output_weights)

    def test_evaluate_empty_rejected(self):
        rng = np.random.default_rng(16)
        model = DbnModel.initialize((4, 3, 3), rng, num_classes=2)
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 4)), np.zeros(0, dtype=int), SupervisedConfig())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(17)
        model = DbnModel.initialize((6, 4, 3), rng, num_classes=5)
        path = tmp_path / "model.dbnc"
        save_model(model, path, config={"note": "fixture"})
        loaded, config = load_model(path)
        assert config == {"note": "fixture"}
        assert len(loaded.layers) == 2
        for a, b in zip(model.layers, loaded.layers):
            assert np.array_equal(a.weights, b.weights)
            assert np.array_equal(a.visible_bias, b.visible_bias)
            assert np.array_equal(a.hidden_bias, b.hidden_bias)
        assert np.array_equal(model.output_weights, loaded.output_weights)
        assert np.array_equal(model.output_bias, loaded.output_bias)

    def test_rejects_non_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(ValueError):
            load_model(path)

    def test_predictions_survive_round_trip(self, tmp_path):
        rng = np.random.default_rng(18)
        model = DbnModel.initialize((4, 3, 3), rng, num_classes=3, weight_scale=0.5)
        x = rng.random((5, 4))
        save_model(model, tmp_path / "m")
        loaded, _ = load_model(tmp_path / "m")
        p1, _ = forward(model, x, SupervisedConfig())
        p2, _ = forward(loaded, x, SupervisedConfig())
        assert np.array_equal(p1, p2)
