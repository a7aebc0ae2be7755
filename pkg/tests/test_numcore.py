import math
import threading

import numpy as np
import pytest

from conftest import numeric_gradient, relative_error
from eeg_engine import numcore as nc
from eeg_engine.errors import (
    DimensionError,
    LabelError,
    NumericalError,
    TooShortError,
    UninitializedStatisticsError,
)


def conv_temporal_oracle(x, w, b, stride):
    batch, c_in, electrodes, time = x.shape
    c_out, _, _, k = w.shape
    t_out = (time - k) // stride + 1
    out = np.zeros((batch, c_out, electrodes, t_out))
    for n in range(batch):
        for o in range(c_out):
            for e in range(electrodes):
                for t in range(t_out):
                    total = b[o]
                    for i in range(c_in):
                        for j in range(k):
                            total += x[n, i, e, t * stride + j] * w[o, i, 0, j]
                    out[n, o, e, t] = total
    return out


def conv_spatial_oracle(x, w, b, stride):
    batch, c_in, electrodes, time = x.shape
    c_out = w.shape[0]
    times = range(0, time, stride)
    out = np.zeros((batch, c_out, 1, len(times)))
    for n in range(batch):
        for o in range(c_out):
            for col, t in enumerate(times):
                total = b[o]
                for i in range(c_in):
                    for e in range(electrodes):
                        total += x[n, i, e, t] * w[o, i, e, 0]
                out[n, o, 0, col] = total
    return out


N_INSTANCES = 20


def check_op_gradients(make_loss, params, tol=1e-5):
    """Tape gradients of ``make_loss()`` against central differences for each parameter."""
    with nc.ComputationTape():
        loss = make_loss()
    nc.backward(loss, params)
    analytic = [p.grad.copy() for p in params]
    for param, grad in zip(params, analytic):
        numeric = numeric_gradient(lambda: make_loss().item(), param.data)
        assert relative_error(grad, numeric) < tol, param.name


class TestConvolutions:
    def test_conv_temporal_hand_example(self):
        x = nc.Tensor(np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3))
        w = nc.Tensor(np.ones((1, 1, 1, 2)))
        out = nc.conv_temporal(x, w, nc.Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data.ravel(), [3.0, 5.0])

    def test_conv_temporal_identity_kernel(self, rng):
        x = rng.standard_normal((2, 1, 3, 7))
        out = nc.conv_temporal(nc.Tensor(x), nc.Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_array_equal(out.data, x)

    @pytest.mark.parametrize("seed", range(10))
    def test_conv_temporal_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        c_in, stride, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 6))
        x = rng.standard_normal((2, c_in, 3, 20))
        w = rng.standard_normal((4, c_in, 1, k))
        b = rng.standard_normal(4)
        out = nc.conv_temporal(nc.Tensor(x), nc.Tensor(w), nc.Tensor(b), stride_t=stride)
        np.testing.assert_allclose(out.data, conv_temporal_oracle(x, w, b, stride), rtol=0, atol=1e-12)

    def test_conv_spatial_sum_case(self):
        x = nc.Tensor(np.array([[3.0, 3.0], [4.0, 4.0]]).reshape(1, 1, 2, 2))
        out = nc.conv_spatial(x, nc.Tensor(np.ones((1, 1, 2, 1))))
        np.testing.assert_array_equal(out.data.ravel(), [7.0, 7.0])

    @pytest.mark.parametrize("seed", range(10))
    def test_conv_spatial_matches_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        c_in, stride = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.standard_normal((2, c_in, 5, 13))
        w = rng.standard_normal((3, c_in, 5, 1))
        b = rng.standard_normal(3)
        out = nc.conv_spatial(nc.Tensor(x), nc.Tensor(w), nc.Tensor(b), stride_t=stride)
        np.testing.assert_allclose(out.data, conv_spatial_oracle(x, w, b, stride), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_stride_on_spatial_conv_matches_strided_temporal_conv(self, seed):
        rng = np.random.default_rng(700 + seed)
        k, stride, electrodes = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
        x = nc.Tensor(rng.standard_normal((2, 1, electrodes, int(rng.integers(k, 30)))))
        w_t = nc.Tensor(rng.standard_normal((3, 1, 1, k)))
        w_s = nc.Tensor(rng.standard_normal((3, 3, electrodes, 1)))
        b = nc.Tensor(rng.standard_normal(3))
        moved = nc.conv_spatial(nc.conv_temporal(x, w_t, b, stride_t=1), w_s, b, stride_t=stride)
        strided = nc.conv_spatial(nc.conv_temporal(x, w_t, b, stride_t=stride), w_s, b, stride_t=1)
        assert moved.shape == strided.shape
        np.testing.assert_allclose(moved.data, strided.data, rtol=0, atol=1e-12)

    def test_conv_spatial_electrode_mismatch(self, rng):
        with pytest.raises(DimensionError):
            nc.conv_spatial(nc.Tensor(rng.standard_normal((1, 1, 3, 5))), nc.Tensor(np.ones((1, 1, 2, 1))))

    def test_kernel_longer_than_input(self, rng):
        with pytest.raises(TooShortError):
            nc.conv_temporal(nc.Tensor(rng.standard_normal((1, 1, 1, 3))), nc.Tensor(np.ones((1, 1, 1, 4))))


class TestBatchNorm:
    def test_training_moments(self, rng):
        x = nc.Tensor(rng.standard_normal((4, 3, 2, 10)) * 5.0 + 2.0)
        stats = nc.RunningStats(3)
        out = nc.batch_norm(x, nc.Tensor(np.ones(3)), nc.Tensor(np.zeros(3)), stats, training=True, eps=0.0)
        np.testing.assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.data.std(axis=(0, 2, 3)), 1.0, atol=1e-6)

    def test_constant_input_gives_zero(self):
        x = nc.Tensor(np.full((2, 1, 1, 4), 3.0))
        out = nc.batch_norm(x, nc.Tensor(np.ones(1)), nc.Tensor(np.zeros(1)), nc.RunningStats(1), training=True)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_zero_gamma_gives_beta(self, rng):
        x = nc.Tensor(rng.standard_normal((2, 2, 1, 4)))
        beta = np.array([0.5, -1.5])
        out = nc.batch_norm(x, nc.Tensor(np.zeros(2)), nc.Tensor(beta), nc.RunningStats(2), training=True)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta[None, :, None, None], out.shape))

    def test_eval_before_training_raises(self, rng):
        x = nc.Tensor(rng.standard_normal((2, 1, 1, 4)))
        with pytest.raises(UninitializedStatisticsError):
            nc.batch_norm(x, nc.Tensor(np.ones(1)), nc.Tensor(np.zeros(1)), nc.RunningStats(1), training=False)

    def test_first_batch_initializes_running_stats(self, rng):
        data = rng.standard_normal((3, 2, 2, 5))
        stats = nc.RunningStats(2)
        nc.batch_norm(nc.Tensor(data), nc.Tensor(np.ones(2)), nc.Tensor(np.zeros(2)), stats, training=True)
        np.testing.assert_allclose(stats.mean, data.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(stats.var, data.var(axis=(0, 2, 3), ddof=1))


class TestElementwise:
    def test_closed_forms(self):
        x = nc.Tensor(np.array([0.0, 1.0, -1.0]))
        np.testing.assert_allclose(nc.elu(x).data, [0.0, 1.0, math.exp(-1.0) - 1.0])
        assert nc.square(nc.Tensor(np.array([-3.0]))).data[0] == 9.0
        assert nc.safe_log(nc.Tensor(np.array([0.0]))).data[0] == pytest.approx(-13.815510557964274)

    def test_safe_log_gradient_is_zero_at_floor(self):
        p = nc.Parameter(np.array([0.0, 2.0]))
        with nc.ComputationTape():
            loss = nc.sum_all(nc.safe_log(p))
        nc.backward(loss, [p])
        np.testing.assert_allclose(p.grad, [0.0, 0.5])

    def test_non_finite_output_raises(self):
        with pytest.raises(NumericalError, match="square"):
            nc.square(nc.Tensor(np.array([1e200])))


class TestPooling:
    def test_max_pool_example(self):
        x = nc.Tensor(np.array([1.0, 3.0, 2.0, 5.0]).reshape(1, 1, 1, 4))
        np.testing.assert_array_equal(nc.max_pool_t(x, 2, 2).data.ravel(), [3.0, 5.0])

    def test_mean_pool_example(self):
        x = nc.Tensor(np.array([2.0, 4.0, 6.0]).reshape(1, 1, 1, 3))
        np.testing.assert_array_equal(nc.mean_pool_t(x, 3, 1).data.ravel(), [4.0])

    def test_max_pool_tie_routes_to_first(self):
        p = nc.Parameter(np.ones((1, 1, 1, 2)))
        with nc.ComputationTape():
            loss = nc.sum_all(nc.max_pool_t(p, 2, 1))
        nc.backward(loss, [p])
        np.testing.assert_array_equal(p.grad.ravel(), [1.0, 0.0])

    def test_pool_longer_than_input(self):
        with pytest.raises(TooShortError):
            nc.mean_pool_t(nc.Tensor(np.ones((1, 1, 1, 2))), 3, 1)


class TestHead:
    def test_log_softmax_symmetry(self):
        out = nc.log_softmax(nc.Tensor(np.zeros((1, 2))))
        np.testing.assert_allclose(out.data, [[-math.log(2.0), -math.log(2.0)]])

    def test_log_softmax_rows_sum_to_one(self, rng):
        out = nc.log_softmax(nc.Tensor(rng.standard_normal((6, 2)) * 10.0))
        np.testing.assert_allclose(np.exp(out.data).sum(axis=1), 1.0, atol=1e-12)

    def test_nll_loss_hand_formula(self, rng):
        log_probs = nc.log_softmax(nc.Tensor(rng.standard_normal((5, 2))))
        labels = np.array([0, 1, 1, 0, 1])
        expected = -np.mean(log_probs.data[np.arange(5), labels])
        assert nc.nll_loss(log_probs, labels).item() == pytest.approx(expected)

    def test_nll_loss_perfect_prediction(self):
        log_probs = nc.Tensor(np.array([[0.0, -50.0]]))
        assert nc.nll_loss(log_probs, [0]).item() == 0.0

    def test_label_out_of_range(self):
        with pytest.raises(LabelError):
            nc.nll_loss(nc.Tensor(np.zeros((1, 2))), [2])

    def test_dense_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nc.dense(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((2, 4))))


class TestGradients:
    def test_sum_gives_ones(self, rng):
        p = nc.Parameter(rng.standard_normal((2, 3)))
        with nc.ComputationTape():
            loss = nc.sum_all(p)
        nc.backward(loss, [p])
        np.testing.assert_array_equal(p.grad, 1.0)

    def test_sum_of_squares(self, rng):
        p = nc.Parameter(rng.standard_normal(4))
        with nc.ComputationTape():
            loss = nc.sum_all(nc.square(p))
        nc.backward(loss, [p])
        np.testing.assert_allclose(p.grad, 2.0 * p.data)

    def test_unreachable_parameter_gets_zero(self, rng):
        used = nc.Parameter(rng.standard_normal(3))
        unused = nc.Parameter(rng.standard_normal(3))
        unused.grad = np.ones(3)
        with nc.ComputationTape() as tape:
            loss = nc.sum_all(used)
        nc.backward(loss, [used, unused])
        np.testing.assert_array_equal(unused.grad, 0.0)
        assert len(tape) == 0

    def test_backward_needs_scalar(self, rng):
        p = nc.Parameter(rng.standard_normal(3))
        with nc.ComputationTape():
            out = nc.square(p)
        with pytest.raises(DimensionError):
            nc.backward(out, [p])

    def test_no_tape_records_nothing(self, rng):
        p = nc.Parameter(rng.standard_normal(3))
        assert nc.sum_all(p).tape is None
        with nc.ComputationTape() as tape:
            with nc.no_grad():
                nc.sum_all(p)
            assert nc.active_tape() is tape
        assert len(tape) == 0

    def test_tape_is_thread_local(self):
        seen = []
        with nc.ComputationTape():
            thread = threading.Thread(target=lambda: seen.append(nc.active_tape()))
            thread.start()
            thread.join()
        assert seen == [None]

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_conv_temporal_gradient(self, seed):
        rng = np.random.default_rng(seed)
        c_in, k, stride = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        x = nc.Parameter(rng.standard_normal((2, c_in, 2, 9)), name="x")
        w = nc.Parameter(rng.standard_normal((3, c_in, 1, k)), name="w")
        b = nc.Parameter(rng.standard_normal(3), name="b")
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.conv_temporal(x, w, b, stride_t=stride))), [x, w, b])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_conv_spatial_gradient(self, seed):
        rng = np.random.default_rng(100 + seed)
        c_in, stride = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        x = nc.Parameter(rng.standard_normal((2, c_in, 3, 7)), name="x")
        w = nc.Parameter(rng.standard_normal((2, c_in, 3, 1)), name="w")
        b = nc.Parameter(rng.standard_normal(2), name="b")
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.conv_spatial(x, w, b, stride_t=stride))), [x, w, b])

    @pytest.mark.parametrize("training", [True, False])
    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_batch_norm_gradient(self, seed, training):
        rng = np.random.default_rng(200 + seed)
        x = nc.Parameter(rng.standard_normal((3, 2, 2, 4)), name="x")
        gamma = nc.Parameter(rng.uniform(0.5, 1.5, 2), name="gamma")
        beta = nc.Parameter(rng.standard_normal(2), name="beta")
        stats = nc.RunningStats(2)
        nc.batch_norm(nc.Tensor(rng.standard_normal((3, 2, 2, 4))), gamma, beta, stats, training=True)
        # sum of squares of a normalized batch is constant, so project first
        projection = nc.Tensor(rng.standard_normal((1, 2, 2, 1)))

        def loss():
            out = nc.batch_norm(x, gamma, beta, stats, training=training)
            return nc.sum_all(nc.square(nc.conv_spatial(out, projection)))

        check_op_gradients(loss, [x, gamma, beta])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_elementwise_and_pool_gradients(self, seed):
        rng = np.random.default_rng(300 + seed)
        length, stride = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        x = nc.Parameter(rng.standard_normal((2, 1, 2, 8)), name="x")
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.elu(x))), [x])
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.max_pool_t(x, length, stride))), [x])
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.mean_pool_t(x, length, stride))), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_safe_log_gradient(self, seed):
        rng = np.random.default_rng(400 + seed)
        x = nc.Parameter(rng.uniform(0.5, 2.0, (1, 1, 2, 5)), name="x")
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.safe_log(nc.square(x)))), [x])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_head_gradients(self, seed):
        rng = np.random.default_rng(500 + seed)
        x = nc.Parameter(rng.standard_normal((4, 6)), name="x")
        w = nc.Parameter(rng.standard_normal((2, 6)), name="w")
        b = nc.Parameter(rng.standard_normal(2), name="b")
        labels = rng.integers(0, 2, 4)
        check_op_gradients(lambda: nc.nll_loss(nc.log_softmax(nc.dense(x, w, b)), labels), [x, w, b])

    @pytest.mark.parametrize("seed", range(N_INSTANCES))
    def test_flatten_gradient(self, seed):
        rng = np.random.default_rng(600 + seed)
        x = nc.Parameter(rng.standard_normal((2, 2, 1, 3)), name="x")
        check_op_gradients(lambda: nc.sum_all(nc.square(nc.flatten(x))), [x])


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        p = nc.Parameter(np.array([1.0, 1.0]))
        p.grad = np.array([0.3, -2.0])
        nc.adam_step([p], lr=0.01)
        np.testing.assert_allclose(p.data, [0.99, 1.01], atol=1e-6)
        assert p.step_count == 1
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_zero_gradient_keeps_value(self):
        p = nc.Parameter(np.array([2.0]))
        nc.adam_step([p], lr=0.1)
        assert p.data[0] == 2.0
        assert p.step_count == 1

    def test_constant_gradient_update_converges_to_lr(self):
        p = nc.Parameter(np.array([0.0]))
        previous = 0.0
        for _ in range(200):
            p.grad = np.array([0.5])
            nc.adam_step([p], lr=0.01)
            step, previous = previous - p.data[0], p.data[0]
        assert step == pytest.approx(0.01, rel=1e-4)
