import numpy as np
import pytest

from gaplab import ops
from gaplab.rng import make_rng


class TestConv2d:
    def test_identity_kernel(self):
        x = make_rng(1).standard_normal((3, 5, 5)).astype(np.float32)
        kernel = np.zeros((3, 3, 1, 1), dtype=np.float32)
        for c in range(3):
            kernel[c, c, 0, 0] = 1.0
        y = ops.conv2d(x, kernel, stride=1, padding=0)
        np.testing.assert_array_equal(y, x)

    def test_all_ones_3x3_padded(self):
        # 3x3 ones kernel on a 3x3 ones image: center sums 9 live cells,
        # edges 6, corners 4
        x = np.ones((1, 3, 3), dtype=np.float32)
        k = np.ones((1, 1, 3, 3), dtype=np.float32)
        y = ops.conv2d(x, k, stride=1, padding=1)
        expected = np.array([[[4, 6, 4], [6, 9, 6], [4, 6, 4]]], dtype=np.float32)
        np.testing.assert_array_equal(y, expected)

    def test_output_size_formula(self):
        assert ops.conv_output_size(4, 3, 2, 1) == 2
        x = np.ones((1, 4, 4), dtype=np.float32)
        k = np.ones((1, 1, 3, 3), dtype=np.float32)
        assert ops.conv2d(x, k, stride=2, padding=1).shape == (1, 2, 2)

    def test_channel_mismatch_raises(self):
        x = np.ones((2, 4, 4), dtype=np.float32)
        k = np.ones((1, 3, 3, 3), dtype=np.float32)
        with pytest.raises(ValueError):
            ops.conv2d(x, k)

    def test_kernel_larger_than_padded_input_raises(self):
        with pytest.raises(ValueError):
            ops.conv_output_size(2, 5, 1, 1)

    def test_linearity(self):
        rng = make_rng(7)
        k = rng.standard_normal((4, 3, 3, 3)).astype(np.float32)
        for _ in range(5):
            x1 = rng.standard_normal((3, 6, 6)).astype(np.float32)
            x2 = rng.standard_normal((3, 6, 6)).astype(np.float32)
            a, b = rng.standard_normal(2).astype(np.float32)
            lhs = ops.conv2d(a * x1 + b * x2, k, stride=1, padding=1)
            rhs = a * ops.conv2d(x1, k, stride=1, padding=1) + b * ops.conv2d(x2, k, stride=1, padding=1)
            np.testing.assert_allclose(lhs, rhs, atol=1e-5)

    def test_batched_matches_single(self):
        rng = make_rng(8)
        x = rng.standard_normal((4, 3, 6, 6)).astype(np.float32)
        k = rng.standard_normal((2, 3, 3, 3)).astype(np.float32)
        b = rng.standard_normal(2).astype(np.float32)
        y = ops.conv2d(x, k, b, stride=2, padding=1)
        for i in range(4):
            np.testing.assert_array_equal(y[i], ops.conv2d(x[i], k, b, stride=2, padding=1))

    def test_deterministic(self):
        rng = make_rng(9)
        x = rng.standard_normal((3, 8, 8)).astype(np.float32)
        k = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
        y1 = ops.conv2d(x, k, stride=1, padding=1)
        y2 = ops.conv2d(x.copy(), k.copy(), stride=1, padding=1)
        assert y1.tobytes() == y2.tobytes()


class TestMaxPool:
    def test_identity_pooling(self):
        x = make_rng(2).standard_normal((2, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(ops.maxpool2d(x, 1, 1, 0), x)

    def test_2x2(self):
        x = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
        np.testing.assert_array_equal(ops.maxpool2d(x, 2, 2, 0), [[[4]]])

    def test_padding_zeros_join_the_max(self):
        # padded zeros participate, so an all-negative input maxes to 0
        # wherever a patch touches the border
        x = -np.ones((1, 3, 3), dtype=np.float32)
        y = ops.maxpool2d(x, 3, 1, 1)
        expected = np.full((1, 3, 3), 0.0, dtype=np.float32)
        expected[0, 1, 1] = -1.0  # the one patch with no padding in view
        np.testing.assert_array_equal(y, expected)


class TestBatchNorm:
    def test_eval_identity_state(self):
        x = make_rng(3).standard_normal((2, 3, 4, 4)).astype(np.float32)
        g, b = np.ones(3, np.float32), np.zeros(3, np.float32)
        rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
        y, _ = ops.batchnorm(x, g, b, rm, rv, mode="eval")
        np.testing.assert_allclose(y, x, atol=1e-4)

    def test_train_constant_input_gives_beta(self):
        x = np.full((4, 2, 3, 3), 7.0, dtype=np.float32)
        g = np.ones(2, np.float32)
        b = np.array([1.5, -2.0], dtype=np.float32)
        rm, rv = np.zeros(2, np.float32), np.ones(2, np.float32)
        y, _ = ops.batchnorm(x, g, b, rm, rv, mode="train")
        np.testing.assert_allclose(y[:, 0], 1.5, atol=1e-5)
        np.testing.assert_allclose(y[:, 1], -2.0, atol=1e-5)

    def test_eval_hand_computed(self):
        # one channel, two elements; y = (x - mu) / sqrt(v + eps) * g + b
        x = np.array([[[[1.0, 3.0]]]], dtype=np.float32)
        g = np.array([2.0], np.float32)
        b = np.array([0.5], np.float32)
        rm = np.array([1.0], np.float32)
        rv = np.array([4.0], np.float32)
        y, _ = ops.batchnorm(x, g, b, rm, rv, mode="eval", eps=1e-5)
        expected = (x - 1.0) / np.sqrt(4.0 + 1e-5) * 2.0 + 0.5
        np.testing.assert_allclose(y, expected, rtol=1e-6)

    def test_running_stats_momentum(self):
        x = make_rng(4).standard_normal((8, 1, 2, 2)).astype(np.float32)
        g, b = np.ones(1, np.float32), np.zeros(1, np.float32)
        rm, rv = np.zeros(1, np.float32), np.ones(1, np.float32)
        ops.batchnorm(x, g, b, rm, rv, mode="train", momentum=0.9)
        np.testing.assert_allclose(rm, 0.1 * x.mean(), atol=1e-6)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(), atol=1e-6)

    def test_state_shape_mismatch(self):
        x = np.ones((1, 3, 2, 2), dtype=np.float32)
        one = np.ones(2, np.float32)
        with pytest.raises(ValueError):
            ops.batchnorm(x, one, one, one, one, mode="eval")


class TestActivationsAndPooling:
    def test_relu(self):
        np.testing.assert_array_equal(
            ops.relu(np.array([-1.0, 2.0], dtype=np.float32)), [0.0, 2.0]
        )

    def test_global_avg_pool_constant(self):
        x = np.full((3, 5, 5), 2.5, dtype=np.float32)
        np.testing.assert_allclose(ops.global_avg_pool(x), [2.5, 2.5, 2.5])

    def test_global_avg_pool_mean(self):
        x = np.array([[[1.0, 3.0], [5.0, 7.0]]], dtype=np.float32)
        np.testing.assert_allclose(ops.global_avg_pool(x), [4.0])


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, probs = ops.softmax_cross_entropy(np.zeros(10, dtype=np.float32), 3)
        assert loss == pytest.approx(np.log(10.0), abs=1e-6)
        np.testing.assert_allclose(probs, 0.1, atol=1e-7)

    def test_large_margin_limit(self):
        logits = np.zeros(10, dtype=np.float32)
        logits[2] = 60.0
        loss, _ = ops.softmax_cross_entropy(logits, 2)
        assert loss < 1e-8

    def test_two_class_closed_form(self):
        loss, _ = ops.softmax_cross_entropy(np.array([1.0, 0.0], dtype=np.float32), 0)
        assert loss == pytest.approx(np.log(1 + np.exp(-1.0)), abs=1e-6)

    def test_probs_sum_to_one(self):
        logits = make_rng(5).standard_normal((7, 13)).astype(np.float32) * 10
        _, probs = ops.softmax_cross_entropy(logits, np.arange(7) % 13)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_stability_under_shift(self):
        logits = np.array([1000.0, 999.0], dtype=np.float32)
        loss, _ = ops.softmax_cross_entropy(logits, 0)
        assert np.isfinite(loss)
        assert loss == pytest.approx(np.log(1 + np.exp(-1.0)), abs=1e-4)

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            ops.softmax_cross_entropy(np.zeros(3, dtype=np.float32), 3)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            ops.softmax_cross_entropy(np.zeros(1, dtype=np.float32), 0)
