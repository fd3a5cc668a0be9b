import numpy as np
import pytest

from fasthebb import data as dio, pipeline
from fasthebb.data import Dataset
from fasthebb.errors import (
    BadMagic,
    CorruptFile,
    EmptyLabeledSet,
    VersionMismatch,
)
from fasthebb.layers import Flatten, HebbLayer, ReLU, init_weights
from fasthebb.pipeline import (
    LinearProbe,
    TrainConfig,
    evaluate,
    extract_features,
    learning_rate,
    load_checkpoint,
    pretrain,
    probe_loss_grad,
    save_checkpoint,
    train_probe,
)
from fasthebb.rules import LearningParams


class TestLearningRateSchedule:
    def test_against_table(self):
        # 20 epochs: constant for the first 10, then halved every 2
        base = 1e-3
        expected = [base] * 10 + [
            base / 2, base / 2, base / 4, base / 4, base / 8,
            base / 8, base / 16, base / 16, base / 32, base / 32,
        ]
        actual = [learning_rate(base, e, 20) for e in range(20)]
        np.testing.assert_allclose(actual, expected, rtol=1e-15)


class TestPretrain:
    def test_no_hebbian_layers_is_identity(self):
        ds = dio.synth_gaussian(20, 3, 1.0, seed=0)
        stack, metrics = pretrain([ReLU(), Flatten()], ds, TrainConfig(epochs=2))
        assert metrics.epoch_metrics == []

    def test_hpca_aligns_with_top_eigenvector(self):
        theta = 0.6
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        cov = rot @ np.diag([9.0, 1.0]) @ rot.T
        ds = dio.synth_gaussian(500, 2, cov, seed=3)
        x = ds.images.reshape(500, 2)
        evals, evecs = np.linalg.eigh(x.T @ x / 500)
        top = evecs[:, np.argmax(evals)]
        layer = HebbLayer(
            init_weights(1, 2, seed=0), LearningParams(eta=1e-2, rule="hpca")
        )
        stack, _ = pretrain([layer], ds, TrainConfig(epochs=20, hebb_lr=1e-2, seed=0))
        w = stack[0].weights.data[0, 0]
        assert abs(w @ top / np.linalg.norm(w)) >= 0.99

    def test_swta_finds_centroids(self):
        sep = 12.0
        ds, centroids = dio.synth_clusters(3, 450, 8, sep, seed=5)
        layer = HebbLayer(
            init_weights(3, 8, seed=1),
            LearningParams(eta=0.1, temperature=0.05, rule="swta"),
        )
        stack, _ = pretrain([layer], ds, TrainConfig(epochs=20, seed=0))
        w = stack[0].weights.data[0]
        remaining = list(range(3))
        worst = 0.0
        for n in range(3):
            dists = [np.linalg.norm(w[n] - centroids[c]) for c in remaining]
            best = int(np.argmin(dists))
            worst = max(worst, dists[best])
            remaining.pop(best)
        assert worst <= 0.1 * sep

    def test_deterministic(self):
        ds = dio.synth_gaussian(60, 4, 1.0, seed=1)

        def run():
            layer = HebbLayer(
                init_weights(2, 4, seed=0), LearningParams(eta=0.01, rule="hpca")
            )
            stack, metrics = pretrain([layer], ds, TrainConfig(epochs=3, seed=4))
            return stack[0].weights.data, metrics.epoch_metrics

        w1, m1 = run()
        w2, m2 = run()
        np.testing.assert_array_equal(w1, w2)
        assert m1 == m2

    def test_layerwise_schedule_runs(self):
        ds = dio.synth_gaussian(40, 4, 1.0, seed=2)
        stack = [
            HebbLayer(init_weights(3, 4, seed=0), LearningParams(eta=0.01, rule="hpca")),
            ReLU(),
            HebbLayer(init_weights(2, 3, seed=1), LearningParams(eta=0.01, rule="swta")),
        ]
        trained, metrics = pretrain(
            stack, ds, TrainConfig(epochs=2, layer_schedule="layerwise", seed=0)
        )
        assert len(metrics.epoch_metrics) == 4  # 2 epochs per trainable layer

    def test_never_reads_labels(self):
        # pretrain consumes only the image array
        images = np.random.default_rng(0).standard_normal((30, 1, 1, 4))
        ds = Dataset(images, np.zeros(30, dtype=np.int64), 1)
        layer = HebbLayer(init_weights(2, 4, seed=0), LearningParams(eta=0.01, rule="swta"))
        stack, _ = pretrain([layer], ds, TrainConfig(epochs=1, seed=0))


class TestExtractFeatures:
    def test_identity_stack(self):
        ds = dio.synth_gaussian(10, 6, 1.0, seed=0)
        feats = extract_features([Flatten()], ds)
        np.testing.assert_array_equal(feats, ds.images.reshape(10, 6))

    def test_zero_weights_with_relu(self):
        ds = dio.synth_gaussian(10, 4, 1.0, seed=0)
        layer = HebbLayer(
            init_weights(3, 4, seed=0), LearningParams(rule="swta")
        )
        from dataclasses import replace

        from fasthebb.tensor import Tensor

        layer = replace(layer, weights=Tensor(np.zeros((1, 3, 4))))
        feats = extract_features([layer, ReLU()], ds)
        assert np.all(feats == 0)

    def test_feature_dim(self):
        ds = dio.synth_gaussian(7, 5, 1.0, seed=0)
        layer = HebbLayer(init_weights(3, 5, seed=0), LearningParams(rule="hpca"))
        feats = extract_features([layer], ds)
        assert feats.shape == (7, 3)


class TestProbe:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        feats = rng.standard_normal((8, 5))
        labels = rng.integers(0, 3, size=8)
        w = rng.standard_normal((3, 5)) * 0.5
        b = rng.standard_normal(3) * 0.1
        _, gw, gb = probe_loss_grad(w, b, feats, labels, weight_decay=0.01)
        eps = 1e-6

        def loss_at(wv, bv):
            return probe_loss_grad(wv, bv, feats, labels, weight_decay=0.01)[0]

        for idx in np.ndindex(w.shape):
            wp, wm = w.copy(), w.copy()
            wp[idx] += eps
            wm[idx] -= eps
            fd = (loss_at(wp, b) - loss_at(wm, b)) / (2 * eps)
            assert abs(fd - gw[idx]) <= 1e-6
        for i in range(3):
            bp, bm = b.copy(), b.copy()
            bp[i] += eps
            bm[i] -= eps
            fd = (loss_at(w, bp) - loss_at(w, bm)) / (2 * eps)
            assert abs(fd - gb[i]) <= 1e-6

    def test_separable_data(self):
        rng = np.random.default_rng(1)
        feats = np.concatenate(
            [rng.normal(-3.0, 0.3, (50, 2)), rng.normal(3.0, 0.3, (50, 2))]
        )
        labels = np.array([0] * 50 + [1] * 50)
        cfg = TrainConfig(epochs=20, batch_size=16, probe_lr=0.1, seed=0)
        probe = train_probe(feats, labels, cfg)
        acc = evaluate(probe, feats, labels, 1)
        assert acc >= 0.99

    def test_zero_features_majority_class(self):
        labels = np.array([0] * 30 + [1] * 10)
        feats = np.zeros((40, 3))
        cfg = TrainConfig(epochs=10, probe_lr=0.1, seed=0, early_stopping=False)
        probe = train_probe(feats, labels, cfg, class_count=2)
        acc = evaluate(probe, feats, labels, 1)
        assert acc == pytest.approx(0.75, abs=0.05)

    def test_empty_labeled_set(self):
        with pytest.raises(EmptyLabeledSet):
            train_probe(np.zeros((0, 3)), np.zeros(0, dtype=int), TrainConfig())

    def test_early_stopping_deterministic(self):
        rng = np.random.default_rng(2)
        feats = rng.standard_normal((60, 4))
        labels = rng.integers(0, 3, size=60)
        cfg = TrainConfig(epochs=8, probe_lr=0.05, seed=9)
        a = train_probe(feats, labels, cfg)
        b = train_probe(feats, labels, cfg)
        assert a.best_epoch == b.best_epoch
        np.testing.assert_array_equal(a.weights, b.weights)


class TestEvaluate:
    def _probe(self, scores):
        # identity-feature probe: scores == features
        n_classes = scores.shape[1]
        return LinearProbe(np.eye(n_classes), np.zeros(n_classes))

    def test_k_equals_class_count(self):
        scores = np.random.default_rng(3).standard_normal((6, 4))
        labels = np.array([0, 1, 2, 3, 0, 1])
        assert evaluate(self._probe(scores), scores, labels, k=4) == 1.0

    def test_perfect_scores(self):
        scores = np.eye(3)
        labels = np.array([0, 1, 2])
        assert evaluate(self._probe(scores), scores, labels, k=1) == 1.0

    def test_hand_built_ranks(self):
        scores = np.array(
            [
                [0.9, 0.5, 0.1],  # label 1 is rank 2
                [0.2, 0.8, 0.3],  # label 1 is rank 1
                [0.1, 0.2, 0.9],  # label 0 is rank 3
            ]
        )
        labels = np.array([1, 1, 0])
        probe = self._probe(scores)
        assert evaluate(probe, scores, labels, k=1) == pytest.approx(1 / 3)
        assert evaluate(probe, scores, labels, k=2) == pytest.approx(2 / 3)
        assert evaluate(probe, scores, labels, k=3) == 1.0

    def test_tie_break_lower_class_index(self):
        scores = np.array([[0.5, 0.5, 0.1]])
        probe = self._probe(scores)
        assert evaluate(probe, scores, np.array([0]), k=1) == 1.0
        assert evaluate(probe, scores, np.array([1]), k=1) == 0.0

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            evaluate(LinearProbe(np.eye(2), np.zeros(2)), np.zeros((1, 2)), np.array([0]), k=0)


class TestCheckpoint:
    def _stack(self):
        return [
            HebbLayer(init_weights(3, 5, seed=0), LearningParams(eta=0.01, rule="hpca")),
            ReLU(),
            HebbLayer(init_weights(2, 3, seed=1), LearningParams(eta=0.02, rule="swta")),
        ]

    def test_round_trip_bitwise(self, tmp_path):
        path = tmp_path / "model.fhb"
        stack = self._stack()
        probe = LinearProbe(
            np.random.default_rng(0).standard_normal((4, 2)), np.zeros(4)
        )
        save_checkpoint(path, stack, probe, "[train]\nepochs = 3\n")
        ckpt = load_checkpoint(path)
        assert ckpt.rules == ["hpca", "swta"]
        np.testing.assert_array_equal(ckpt.weights[0], stack[0].weights.data)
        np.testing.assert_array_equal(ckpt.weights[1], stack[2].weights.data)
        np.testing.assert_array_equal(ckpt.probe.weights, probe.weights)
        assert ckpt.config_echo == "[train]\nepochs = 3\n"

    def test_save_load_save_identical_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.fhb", tmp_path / "b.fhb"
        save_checkpoint(p1, self._stack(), None, "echo")
        ckpt = load_checkpoint(p1)
        from fasthebb.experiment import restore_stack  # noqa: F401
        # re-save the same content
        save_checkpoint(p2, self._stack(), None, "echo")
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.fhb"
        path.write_bytes(b"XXXX" + bytes(32))
        with pytest.raises(BadMagic):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v.fhb"
        save_checkpoint(path, self._stack(), None, "")
        raw = bytearray(path.read_bytes())
        raw[4] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(VersionMismatch):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.fhb"
        save_checkpoint(path, self._stack(), None, "some config")
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 8])
        with pytest.raises(CorruptFile):
            load_checkpoint(path)
