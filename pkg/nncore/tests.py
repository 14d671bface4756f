import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from core.exceptions import CheckpointFormatError, DimensionError, LabelError
from nncore import functional as F
from nncore.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from nncore.gradcheck import grad_check
from nncore.layers import Dense, LayerSpec, PNorm, ReLU, Softmax, TimeDelay
from nncore.network import Network
from nncore.optim import SGD, AdamState, adam_step, make_optimizer, sgd_step

H = 1e-5
SHAPE_SEEDS = range(20)


def numeric_gradient(loss, array, h=H):
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + h
        plus = loss()
        array[index] = original - h
        minus = loss()
        array[index] = original
        grad[index] = (plus - minus) / (2.0 * h)
    return grad


def array_rel_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return np.linalg.norm(analytic - numeric) / scale


def away_from_zero(rng, shape):
    return rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def small_ctdnn_specs():
    return [
        LayerSpec("conv2d", {"in_channels": 1, "out_channels": 2, "kernel_h": 3, "kernel_w": 3}),
        LayerSpec("relu"),
        LayerSpec("maxpool2d", {"pool_h": 1, "pool_w": 2}),
        LayerSpec("timedelay", {"offsets": [-2, 0, 2], "in_dim": 6}),
        LayerSpec("crop", {"left": 2, "right": 2}),
        LayerSpec("dense", {"in_dim": 18, "out_dim": 10}),
        LayerSpec("pnorm", {"in_dim": 10, "group_size": 2, "p": 2.0}),
        LayerSpec("dense", {"in_dim": 5, "out_dim": 4}),
        LayerSpec("softmax"),
    ]


class DenseTests(SimpleTestCase):

    def test_identity_weights_pass_input_through(self):
        x = np.arange(6.0).reshape(2, 3)
        y, _ = F.dense_forward(x, np.eye(3), np.zeros(3))
        np.testing.assert_array_equal(y, x)

    def test_zero_input_yields_bias(self):
        b = np.array([0.5, -1.0])
        y, _ = F.dense_forward(np.zeros((1, 3)), np.ones((2, 3)), b)
        np.testing.assert_array_equal(y[0], b)

    def test_width_mismatch_is_dimension_error(self):
        with self.assertRaisesMessage(DimensionError, "dimension error"):
            F.dense_forward(np.zeros((2, 4)), np.zeros((3, 5)), np.zeros(3))

    def test_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(seed)
            n, d_in, d_out = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 6)
            x = rng.normal(size=(n, d_in))
            W = rng.normal(size=(d_out, d_in))
            b = rng.normal(size=d_out)
            R = rng.normal(size=(n, d_out))

            def loss():
                return float(np.sum(R * F.dense_forward(x, W, b)[0]))

            _, cache = F.dense_forward(x, W, b)
            grad_x, grad_W, grad_b = F.dense_backward(R, cache)
            self.assertLess(array_rel_error(grad_x, numeric_gradient(loss, x)), 1e-6)
            self.assertLess(array_rel_error(grad_W, numeric_gradient(loss, W)), 1e-6)
            self.assertLess(array_rel_error(grad_b, numeric_gradient(loss, b)), 1e-6)


class Conv2dTests(SimpleTestCase):

    def test_unit_kernel_is_identity(self):
        x = np.random.default_rng(0).normal(size=(1, 1, 4, 5))
        y, _ = F.conv2d_forward(x, np.ones((1, 1, 1, 1)), np.zeros(1))
        np.testing.assert_array_equal(y, x)

    def test_all_ones_kernel_sums_windows(self):
        y, _ = F.conv2d_forward(np.ones((1, 1, 3, 3)), np.ones((1, 1, 2, 2)), np.zeros(1))
        np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), 4.0))

    def test_kernel_larger_than_input_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            F.conv2d_forward(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)), np.zeros(1))

    def test_output_size_follows_valid_formula(self):
        y, _ = F.conv2d_forward(np.ones((2, 1, 9, 7)), np.ones((3, 1, 3, 2)), np.zeros(3), stride=2)
        self.assertEqual(y.shape, (2, 3, 4, 3))

    def test_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(100 + seed)
            n, c_in, c_out = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 4)
            kh, kw, stride = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 3)
            x = rng.normal(size=(n, c_in, kh + rng.integers(0, 4), kw + rng.integers(0, 4)))
            W = rng.normal(size=(c_out, c_in, kh, kw))
            b = rng.normal(size=c_out)
            y, cache = F.conv2d_forward(x, W, b, stride)
            R = rng.normal(size=y.shape)

            def loss():
                return float(np.sum(R * F.conv2d_forward(x, W, b, stride)[0]))

            grad_x, grad_W, grad_b = F.conv2d_backward(R, cache)
            self.assertLess(array_rel_error(grad_x, numeric_gradient(loss, x)), 1e-6)
            self.assertLess(array_rel_error(grad_W, numeric_gradient(loss, W)), 1e-6)
            self.assertLess(array_rel_error(grad_b, numeric_gradient(loss, b)), 1e-6)


class MaxPoolTests(SimpleTestCase):

    def test_picks_window_maximum(self):
        y, _ = F.maxpool2d_forward(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
        self.assertEqual(y.shape, (1, 1, 1, 1))
        self.assertEqual(y[0, 0, 0, 0], 4.0)

    def test_ties_route_gradient_to_first_element(self):
        x = np.full((1, 1, 2, 4), 7.0)
        y, cache = F.maxpool2d_forward(x, 2, 2)
        np.testing.assert_array_equal(y, np.full((1, 1, 1, 2), 7.0))
        grad = F.maxpool2d_backward(np.ones_like(y), cache)
        expected = np.zeros((1, 1, 2, 4))
        expected[0, 0, 0, 0] = expected[0, 0, 0, 2] = 1.0
        np.testing.assert_array_equal(grad, expected)

    def test_non_divisible_input_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            F.maxpool2d_forward(np.ones((1, 1, 3, 4)), 2, 2)

    def test_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(200 + seed)
            pool_h, pool_w = rng.integers(1, 4), rng.integers(1, 4)
            shape = (rng.integers(1, 3), rng.integers(1, 3),
                     pool_h * rng.integers(1, 4), pool_w * rng.integers(1, 4))
            # distinct values 0.1 apart keep every maximum unique under perturbation
            x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.1
            y, cache = F.maxpool2d_forward(x, pool_h, pool_w)
            R = rng.normal(size=y.shape)

            def loss():
                return float(np.sum(R * F.maxpool2d_forward(x, pool_h, pool_w)[0]))

            grad = F.maxpool2d_backward(R, cache)
            self.assertLess(array_rel_error(grad, numeric_gradient(loss, x)), 1e-6)


class TimeDelayTests(SimpleTestCase):

    def test_zero_offset_is_identity(self):
        x = np.random.default_rng(1).normal(size=(2, 5, 3))
        y, _ = F.timedelay_forward(x, (0,))
        np.testing.assert_array_equal(y, x)

    def test_single_frame_is_repeated_by_clamping(self):
        x = np.array([[[1.0, 2.0]]])
        y, _ = F.timedelay_forward(x, (-1, 0, 1))
        np.testing.assert_array_equal(y, [[[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]]])

    def test_output_width_and_row_count(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            t, d = rng.integers(1, 9), rng.integers(1, 7)
            y, _ = F.timedelay_forward(np.zeros((1, t, d)), (-2, 0, 1, 3))
            self.assertEqual(y.shape, (1, t, 4 * d))

    def test_empty_input_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            F.timedelay_forward(np.zeros((1, 0, 3)), (0,))

    def test_four_dimensional_input_merges_channels_and_frequency(self):
        x = np.arange(24.0).reshape(1, 2, 3, 4)
        y, _ = F.timedelay_forward(x, (0,))
        np.testing.assert_array_equal(y[0, 1], np.concatenate([x[0, 0, 1], x[0, 1, 1]]))

    def test_layer_rejects_wrong_width(self):
        with self.assertRaises(DimensionError):
            TimeDelay((0, 1), in_dim=4).forward(np.zeros((1, 3, 5)))

    def test_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(300 + seed)
            offsets = tuple(sorted(rng.choice(np.arange(-3, 4), size=rng.integers(1, 5), replace=False)))
            x = rng.normal(size=(rng.integers(1, 3), rng.integers(1, 7), rng.integers(1, 5)))
            y, cache = F.timedelay_forward(x, offsets)
            R = rng.normal(size=y.shape)

            def loss():
                return float(np.sum(R * F.timedelay_forward(x, offsets)[0]))

            grad = F.timedelay_backward(R, cache)
            self.assertLess(array_rel_error(grad, numeric_gradient(loss, x)), 1e-6)


class CropTests(SimpleTestCase):

    def test_drops_edge_rows_and_routes_gradient_back(self):
        x = np.arange(12.0).reshape(1, 6, 2)
        y, cache = F.crop_forward(x, 2, 1)
        np.testing.assert_array_equal(y, x[:, 2:5])
        grad = F.crop_backward(np.ones_like(y), cache)
        self.assertEqual(grad.sum(), 6.0)
        np.testing.assert_array_equal(grad[0, :2], 0.0)

    def test_too_short_input_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            F.crop_forward(np.zeros((1, 3, 2)), 2, 1)


class PNormTests(SimpleTestCase):

    def test_euclidean_group_norm(self):
        y, _ = F.pnorm_forward(np.array([3.0, 4.0]), 2, 2.0)
        self.assertAlmostEqual(y[0], 5.0, places=12)

    def test_zero_group_has_zero_output_and_gradient(self):
        y, cache = F.pnorm_forward(np.array([[0.0, 0.0, 1.0, 0.0]]), 2, 2.0)
        np.testing.assert_array_equal(y, [[0.0, 1.0]])
        grad = F.pnorm_backward(np.ones_like(y), cache)
        np.testing.assert_array_equal(grad, [[0.0, 0.0, 1.0, 0.0]])

    def test_non_divisible_width_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            F.pnorm_forward(np.ones((1, 5)), 2)

    def test_output_dim_is_in_dim_over_group(self):
        self.assertEqual(PNorm(200, 5).out_dim, 40)

    def test_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(400 + seed)
            group, p = int(rng.integers(1, 6)), float(rng.choice([1.0, 2.0, 3.0]))
            x = away_from_zero(rng, (rng.integers(1, 4), group * rng.integers(1, 5)))
            y, cache = F.pnorm_forward(x, group, p)
            R = rng.normal(size=y.shape)

            def loss():
                return float(np.sum(R * F.pnorm_forward(x, group, p)[0]))

            grad = F.pnorm_backward(R, cache)
            self.assertLess(array_rel_error(grad, numeric_gradient(loss, x)), 1e-6)


class ActivationTests(SimpleTestCase):

    def test_relu_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(500 + seed)
            x = away_from_zero(rng, (rng.integers(1, 4), rng.integers(1, 6)))
            R = rng.normal(size=x.shape)
            _, cache = F.relu_forward(x)
            grad = F.relu_backward(R, cache)
            numeric = numeric_gradient(lambda: float(np.sum(R * F.relu_forward(x)[0])), x)
            self.assertLess(array_rel_error(grad, numeric), 1e-6)

    def test_softmax_rows_sum_to_one(self):
        x = np.random.default_rng(3).normal(scale=30.0, size=(50, 7))
        np.testing.assert_allclose(F.softmax(x).sum(axis=-1), 1.0, atol=1e-12)

    def test_softmax_backward_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(600 + seed)
            x = rng.normal(size=(rng.integers(1, 4), rng.integers(2, 6)))
            R = rng.normal(size=x.shape)
            _, cache = F.softmax_forward(x)
            grad = F.softmax_backward(R, cache)
            numeric = numeric_gradient(lambda: float(np.sum(R * F.softmax_forward(x)[0])), x)
            self.assertLess(array_rel_error(grad, numeric), 1e-6)


class CrossEntropyTests(SimpleTestCase):

    def test_uniform_logits_give_log_k(self):
        loss, _ = F.softmax_cross_entropy(np.zeros(6), 2)
        self.assertAlmostEqual(loss, np.log(6.0), places=12)

    def test_saturated_true_class_gives_tiny_loss(self):
        logits = np.zeros(4)
        logits[1] = 1000.0
        loss, _ = F.softmax_cross_entropy(logits, 1)
        self.assertGreaterEqual(loss, 0.0)
        self.assertLess(loss, 1e-6)

    def test_gradient_is_softmax_minus_onehot(self):
        logits = np.array([0.5, -1.0, 2.0])
        _, grad = F.softmax_cross_entropy(logits, 0)
        expected = F.softmax(logits)
        expected[0] -= 1.0
        np.testing.assert_allclose(grad, expected, atol=1e-15)

    def test_out_of_range_label_is_label_error(self):
        with self.assertRaisesMessage(LabelError, "label error"):
            F.softmax_cross_entropy(np.zeros(3), 3)

    def test_gradient_matches_finite_differences(self):
        for seed in SHAPE_SEEDS:
            rng = np.random.default_rng(700 + seed)
            n, k = rng.integers(1, 5), rng.integers(2, 7)
            logits = rng.normal(size=(n, k))
            labels = rng.integers(0, k, size=n)
            _, grad = F.softmax_cross_entropy(logits, labels)
            numeric = numeric_gradient(lambda: F.softmax_cross_entropy(logits, labels)[0], logits)
            self.assertLess(array_rel_error(grad, numeric), 1e-6)


class OptimizerTests(SimpleTestCase):

    def test_zero_learning_rate_leaves_parameters_unchanged(self):
        params = [np.array([1.0, -2.0]), np.ones((2, 2))]
        grads = [np.array([3.0, 4.0]), np.full((2, 2), 5.0)]
        updated, _ = sgd_step(params, grads, lr=0.0, momentum=0.9)
        for before, after in zip(params, updated):
            np.testing.assert_array_equal(before, after)
        updated, _ = adam_step(params, grads, AdamState(), lr=0.0)
        for before, after in zip(params, updated):
            np.testing.assert_array_equal(before, after)

    def test_single_sgd_step_on_square(self):
        w = np.array([1.0])
        (w,), _ = sgd_step([w], [2.0 * w], lr=0.1)
        self.assertAlmostEqual(float(w[0]), 0.8, places=15)

    def test_adam_converges_on_convex_quadratic(self):
        w, state = [np.array([0.0])], AdamState()
        for _ in range(500):
            w, state = adam_step(w, [2.0 * (w[0] - 1.0)], state, lr=0.05)
        self.assertLess(abs(float(w[0][0]) - 1.0), 1e-3)
        self.assertEqual(state.t, 500)

    def test_shape_mismatch_is_dimension_error(self):
        with self.assertRaises(DimensionError):
            sgd_step([np.zeros(3)], [np.zeros(4)], lr=0.1)
        with self.assertRaises(DimensionError):
            adam_step([np.zeros(3)], [], AdamState(), lr=0.1)

    def test_optimizer_object_updates_network_in_place(self):
        net = Network.build([LayerSpec("dense", {"in_dim": 2, "out_dim": 1})], seed=0)
        x = np.array([[1.0, 2.0]])
        net.logits(x, keep_cache=True)
        net.backward(np.ones((1, 1)))
        before = net.layers[0].params["b"].copy()
        SGD(lr=0.5).step([net])
        np.testing.assert_allclose(net.layers[0].params["b"], before - 0.5)
        self.assertEqual(make_optimizer("adam", 0.01).__class__.__name__, "Adam")


class NetworkTests(SimpleTestCase):

    def test_same_seed_builds_identical_parameters(self):
        first = Network.build(small_ctdnn_specs(), seed=11)
        second = Network.build(small_ctdnn_specs(), seed=11)
        for (_, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
            np.testing.assert_array_equal(a, b)

    def test_logits_skip_trailing_softmax(self):
        net = Network.build(small_ctdnn_specs(), seed=1)
        x = np.random.default_rng(0).normal(size=(1, 1, 12, 8))
        np.testing.assert_allclose(F.softmax(net.logits(x)), net.forward(x), atol=1e-15)
        self.assertEqual(net.forward(x).shape, (1, 6, 4))

    def test_taps_expose_intermediate_outputs(self):
        net = Network.build(small_ctdnn_specs(), seed=1)
        x = np.random.default_rng(0).normal(size=(1, 1, 12, 8))
        _, taps = net.forward_with_taps(x, [6])
        self.assertEqual(taps[6].shape, (1, 6, 5))

    def test_forward_is_deterministic(self):
        net = Network.build(small_ctdnn_specs(), seed=4)
        x = np.random.default_rng(5).normal(size=(2, 1, 12, 8))
        np.testing.assert_array_equal(net.forward(x), net.forward(x))


class CheckpointTests(SimpleTestCase):

    def setUp(self):
        self.net = Network.build(
            small_ctdnn_specs(), seed=3,
            metadata={"model_kind": "ctdnn", "seed": 3, "note": "snäll"},
        )

    def test_round_trip_is_bit_exact(self):
        blob = dumps(self.net)
        restored = loads(blob)
        self.assertEqual(dumps(restored), blob)
        self.assertEqual(restored.metadata, self.net.metadata)
        self.assertEqual(restored.specs, self.net.specs)
        x = np.random.default_rng(9).normal(size=(1, 1, 12, 8))
        np.testing.assert_array_equal(restored.forward(x), self.net.forward(x))

    def test_save_and_load_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = save_checkpoint(self.net, Path(tmp) / "models" / "spk.cdn")
            self.assertEqual(path.read_bytes()[:4], b"CDN1")
            self.assertEqual(dumps(load_checkpoint(path)), dumps(self.net))

    def test_bad_magic_is_rejected(self):
        with self.assertRaises(CheckpointFormatError):
            loads(b"XXXX" + dumps(self.net)[4:])

    def test_truncation_is_rejected(self):
        blob = dumps(self.net)
        with self.assertRaises(CheckpointFormatError):
            loads(blob[: len(blob) // 2])

    def test_parameter_count_must_match_spec(self):
        net = Network.build([LayerSpec("dense", {"in_dim": 2, "out_dim": 2})], seed=0)
        blob = bytearray(dumps(net))
        # dense parameter count follows magic, n_layers, tag and two dims
        blob[20:24] = (5).to_bytes(4, "little")
        with self.assertRaisesMessage(CheckpointFormatError, "expected 6"):
            loads(bytes(blob))

    def test_missing_file_is_rejected(self):
        with self.assertRaises(CheckpointFormatError):
            load_checkpoint("/nonexistent/model.cdn")


class BrokenDense(Dense):

    def backward(self, grad_out, cache):
        grad_x = super().backward(grad_out, cache)
        self.grads["b"] = self.grads["b"] + 1.0
        return grad_x


class GradCheckTests(SimpleTestCase):

    def test_dense_relu_network_passes(self):
        net = Network.build([
            LayerSpec("dense", {"in_dim": 5, "out_dim": 8}),
            LayerSpec("relu"),
            LayerSpec("dense", {"in_dim": 8, "out_dim": 3}),
            LayerSpec("softmax"),
        ], seed=0)
        x = np.random.default_rng(1).normal(size=(4, 5))
        report = grad_check(net, x, np.array([0, 2, 1, 2]))
        self.assertTrue(report.passed)
        self.assertLess(report.max_rel_error, 1e-4)
        self.assertGreater(report.n_checked, 0)
        self.assertIsNone(report.offending_parameter)

    def test_composed_ctdnn_stack_passes(self):
        net = Network.build(small_ctdnn_specs(), seed=2)
        x = np.random.default_rng(2).normal(size=(1, 1, 12, 8))
        report = grad_check(net, x, 1)
        self.assertLess(report.max_rel_error, 1e-4)
        self.assertEqual(set(report.per_tensor), {"0.W", "0.b", "5.W", "5.b", "7.W", "7.b"})

    def test_corrupted_bias_gradient_is_flagged(self):
        net = Network.build([Dense(4, 3), ReLU(), BrokenDense(3, 2), Softmax()], seed=0)
        x = np.random.default_rng(3).normal(size=(3, 4))
        report = grad_check(net, x, 1)
        self.assertFalse(report.passed)
        self.assertTrue(report.offending_parameter.startswith("2.b["))

    def test_empty_subset_gives_empty_report(self):
        net = Network.build([LayerSpec("dense", {"in_dim": 2, "out_dim": 2})], seed=0)
        report = grad_check(net, np.ones((1, 2)), 0, max_per_tensor=0)
        self.assertTrue(report.empty)
        self.assertEqual(report.max_rel_error, 0.0)

    def test_seeded_subset_limits_checked_entries(self):
        net = Network.build([LayerSpec("dense", {"in_dim": 6, "out_dim": 5})], seed=0)
        report = grad_check(net, np.ones((2, 6)), 0, max_per_tensor=3)
        self.assertEqual(report.n_checked + report.n_skipped, 6)
