import numpy as np
import pytest

from gaplab.data import Dataset, synth_dataset
from gaplab.layers import Conv2d, GlobalAvgPool
from gaplab.network import Network, param_vecc
from gaplab.rng import make_rng
from gaplab.train import (
    TrainSettings,
    estimate_training_loss,
    gradient_noise,
    mean_ce_and_error,
    train_model,
)

from conftest import tiny_config


def separable_toy(n_per_class=40, size=8, seed=2):
    """Two classes riding different channels; linearly separable."""
    rng = make_rng(seed)
    xs, ys = [], []
    for c in range(2):
        x = np.zeros((n_per_class, 3, size, size), dtype=np.float32)
        x[:, c] = 1.0
        x += 0.05 * rng.standard_normal(x.shape).astype(np.float32)
        xs.append(x)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    x, y = np.concatenate(xs), np.concatenate(ys)
    order = rng.permutation(len(y))
    return Dataset(x[order], y[order], x[order], y[order])


class TestTrainModel:
    def test_separable_toy_converges(self):
        ds = separable_toy()
        settings = TrainSettings(threshold=0.01, max_steps=2000, eval_every=25, eval_batches=10, grad_noise_samples=32)
        rec = train_model(tiny_config(batch_size=16, width=4), ds, seed=5, settings=settings)
        assert rec.converged
        assert rec.trace.final_train_ce <= 0.011  # estimator stops at <= 0.01
        assert rec.trace.steps_to_01 is not None
        assert rec.trace.steps_01_to_001 is not None and rec.trace.steps_01_to_001 >= 0
        # interpolating model: every per-example gradient is near zero
        noise = gradient_noise(rec.network, ds.train_x, ds.train_y, 40, make_rng(9, 9))
        assert noise < 1e-3

    def test_bitwise_deterministic(self, blob_data):
        settings = TrainSettings(threshold=0.1, max_steps=800, eval_every=50, eval_batches=10, grad_noise_samples=32)
        recs = [train_model(tiny_config(width=4), blob_data, seed=13, settings=settings) for _ in range(2)]
        assert param_vecc(recs[0].network).tobytes() == param_vecc(recs[1].network).tobytes()
        assert recs[0].trace.to_dict() == recs[1].trace.to_dict()
        assert recs[0].test_error == recs[1].test_error
        for a, b in zip(recs[0].init, recs[1].init):
            assert a.tobytes() == b.tobytes()

    def test_trace_monotonicity(self, trained_record):
        t = trained_record.trace
        assert t.converged
        assert t.steps_to_01 <= t.steps_to_01 + t.steps_01_to_001 <= t.total_steps

    def test_budget_exhaustion_flags_not_converged(self, blob_data):
        settings = TrainSettings(threshold=0.1, max_steps=50, eval_every=50, eval_batches=5, grad_noise_samples=16)
        rec = train_model(tiny_config(width=4, learning_rate=0.001), blob_data, seed=3, settings=settings)
        assert not rec.converged
        assert rec.trace.steps_01_to_001 is None


class TestLossEstimator:
    def test_tiling_batches_equal_full_mean(self, trained_record, blob_data):
        net = trained_record.network
        x, y = blob_data.train_x, blob_data.train_y
        batch = 60
        num = int(np.ceil(len(x) / batch))
        est = estimate_training_loss(net, x, y, batch, num, make_rng(1, 1))
        full, _ = mean_ce_and_error(net, x, y)
        assert est == pytest.approx(full, abs=1e-6)

    def test_constant_logit_network_gives_log_kappa(self, blob_data):
        net = Network(
            [Conv2d(np.zeros((10, 3, 1, 1), np.float32), np.zeros(10, np.float32), 1, 0), GlobalAvgPool()],
            (3, 16, 16),
            10,
        )
        est = estimate_training_loss(net, blob_data.train_x, blob_data.train_y, 32, 5, make_rng(2, 2))
        assert est == pytest.approx(np.log(10.0), abs=1e-6)

    def test_estimator_spread_within_sampling_bound(self, trained_record, blob_data):
        net = trained_record.network
        x, y = blob_data.train_x, blob_data.train_y
        batch, num = 32, 5
        estimates = [
            estimate_training_loss(net, x, y, batch, num, make_rng(3, s)) for s in range(20)
        ]
        # sampling-without-replacement spread is below the iid bound
        losses = []
        for start in range(0, len(x), 256):
            from gaplab import ops

            logits = net.forward(x[start : start + 256], train=False)
            loss, _ = ops.softmax_cross_entropy(logits, y[start : start + 256])
            losses.append(loss)
        per_example_sd = float(np.concatenate(losses).std())
        bound = per_example_sd / np.sqrt(batch * num)
        assert np.std(estimates) <= 2.0 * bound


class TestGradientNoise:
    def test_repeated_example_gives_zero(self, trained_record, blob_data):
        net = trained_record.network
        xs = np.repeat(blob_data.train_x[:1], 8, axis=0)
        ys = np.repeat(blob_data.train_y[:1], 8)
        assert gradient_noise(net, xs, ys, 8, make_rng(4, 4)) == pytest.approx(0.0, abs=1e-12)

    def test_opposite_gradients_give_norm_squared(self):
        w = np.zeros((2, 2, 1, 1), np.float32)
        net = Network([Conv2d(w, np.zeros(2, np.float32), 1, 0), GlobalAvgPool()], (2, 4, 4), 2)
        rng = make_rng(5)
        x1 = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
        x = np.concatenate([x1, -x1])
        y = np.array([0, 0], dtype=np.int64)
        noise = gradient_noise(net, x, y, 2, make_rng(6, 6))
        # zero weights -> uniform probs; per-example weight grads are
        # +/- (p - onehot) outer pooled(x); bias grads coincide and cancel
        pooled = x1.mean(axis=(2, 3))[0]
        v = np.outer([0.5 - 1.0, 0.5], pooled)
        assert noise == pytest.approx(float((v**2).sum()), rel=1e-5)

    def test_split_half_stability(self, trained_record):
        # disjoint halves of >= 1000 fresh examples agree within 5%
        net = trained_record.network
        big = synth_dataset(num_classes=10, per_class=200, image_size=16, seed=3, test_per_class=1)
        x, y = big.train_x, big.train_y
        half = len(x) // 2
        n1 = gradient_noise(net, x[:half], y[:half], half, make_rng(7, 7))
        n2 = gradient_noise(net, x[half:], y[half:], half, make_rng(8, 8))
        assert abs(n1 - n2) / max(n1, n2) <= 0.05


class TestModelRecord:
    def test_gap_is_error_difference(self, trained_record):
        assert trained_record.gap == pytest.approx(
            trained_record.test_error - trained_record.train_error
        )
