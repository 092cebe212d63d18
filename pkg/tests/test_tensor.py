import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import rcmnet.tensor as T
from rcmnet.errors import GraphError, NumericalError, ShapeError
from rcmnet.nn import BatchNorm2d
from rcmnet.tensor import Tensor, backward, finite_diff_grad

from conftest import Probe, grad_check, param
from oracles import conv2d_loops, global_reduce_loops, linear_loops, pool2d_loops

SEEDS = [0, 1, 2, 3, 4]


class TestConv2d:
    def test_scalar(self):
        out = T.conv2d(Tensor([[[[2.0]]]]), Tensor([[[[3.0]]]]))
        assert out.data.tolist() == [[[[6.0]]]]

    def test_sum_of_elements(self):
        out = T.conv2d(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), Tensor(np.ones((1, 1, 2, 2))))
        assert out.data.tolist() == [[[[10.0]]]]

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_loop_oracle(self, seed):
        r = np.random.default_rng(seed)
        x, w, b = r.normal(size=(1, 2, 5, 5)), r.normal(size=(3, 2, 3, 3)), r.normal(size=3)
        out = T.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, padding=1)
        np.testing.assert_allclose(out.data, conv2d_loops(x, w, b, 2, 1), rtol=0, atol=1e-12)

    @pytest.mark.parametrize("stride,padding,k", [(1, 0, 3), (2, 3, 7), (1, 1, 1), (3, 2, 4)])
    def test_other_geometries(self, stride, padding, k, rng):
        x, w = rng.normal(size=(2, 3, 9, 8)), rng.normal(size=(2, 3, k, k))
        out = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        np.testing.assert_allclose(out.data, conv2d_loops(x, w, None, stride, padding), atol=1e-12)

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_nonpositive_extent(self):
        with pytest.raises(ShapeError):
            T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, seed):
        r = np.random.default_rng(seed)
        x, w, b = param(r, 2, 2, 5, 5), param(r, 3, 2, 3, 3), param(r, 3)
        probe = Probe(r)
        assert grad_check(lambda: probe(T.conv2d(x, w, b, stride=2, padding=1)), [x, w, b]) < 1e-6

    def test_deterministic(self, rng):
        x, w = rng.normal(size=(2, 3, 11, 11)), rng.normal(size=(4, 3, 3, 3))
        a = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        b = T.conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
        assert a.tobytes() == b.tobytes()


class TestPool2d:
    def test_max(self):
        x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert T.pool2d(x, "max", 2, 2).data.tolist() == [[[[4.0]]]]

    def test_avg(self):
        x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert T.pool2d(x, "avg", 2, 2).data.tolist() == [[[[2.5]]]]

    @pytest.mark.parametrize("seed", SEEDS)
    def test_max_matches_oracle_exactly(self, seed):
        x = np.random.default_rng(seed).normal(size=(1, 1, 7, 7))
        out = T.pool2d(Tensor(x), "max", 3, 2, 1)
        assert np.array_equal(out.data, pool2d_loops(x, "max", 3, 2, 1))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_avg_counts_in_bounds_cells(self, seed):
        x = np.random.default_rng(seed).normal(size=(2, 3, 7, 6))
        out = T.pool2d(Tensor(x), "avg", 3, 2, 1)
        np.testing.assert_allclose(out.data, pool2d_loops(x, "avg", 3, 2, 1), atol=1e-12)

    def test_max_tie_goes_to_first_cell(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        backward(T.pool2d(x, "max", 2, 2).sum())
        assert x.grad.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]

    def test_avg_gradient_split(self):
        x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2), requires_grad=True)
        backward(T.pool2d(x, "avg", 2, 2).sum())
        assert x.grad.tolist() == [[[[0.25, 0.25], [0.25, 0.25]]]]

    @pytest.mark.parametrize("mode", ["max", "avg"])
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, mode, seed):
        r = np.random.default_rng(seed)
        x = param(r, 2, 2, 7, 7)
        probe = Probe(r)
        assert grad_check(lambda: probe(T.pool2d(x, mode, 3, 2, 1)), [x]) < 1e-6

    def test_deterministic(self, rng):
        x = rng.normal(size=(2, 3, 9, 9))
        assert T.pool2d(Tensor(x), "max", 3, 2, 1).data.tobytes() == T.pool2d(Tensor(x), "max", 3, 2, 1).data.tobytes()

    def test_bad_padding(self):
        with pytest.raises(ShapeError):
            T.pool2d(Tensor(np.zeros((1, 1, 4, 4))), "max", 2, 2, 2)


class TestGlobalPool:
    def test_constant(self):
        x = Tensor(np.full((1, 2, 3, 3), 1.5))
        assert np.all(T.global_pool(x, "avg").data == 1.5)
        assert np.all(T.global_pool(x, "max").data == 1.5)

    def test_small(self):
        x = Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
        assert T.global_pool(x, "avg").data.item() == 2.5
        assert T.global_pool(x, "max").data.item() == 4.0

    @pytest.mark.parametrize("mode", ["max", "avg"])
    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_flat_reduction(self, mode, seed):
        x = np.random.default_rng(seed).normal(size=(2, 3, 4, 5))
        np.testing.assert_allclose(T.global_pool(Tensor(x), mode).data, global_reduce_loops(x, mode), atol=1e-12)

    @pytest.mark.parametrize("mode", ["max", "avg"])
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, mode, seed):
        r = np.random.default_rng(seed)
        x = param(r, 2, 3, 4, 4)
        probe = Probe(r)
        assert grad_check(lambda: probe(T.global_pool(x, mode)), [x]) < 1e-6


class TestActivations:
    def test_relu(self):
        assert T.relu(Tensor([-1.0, 0.0, 2.0])).data.tolist() == [0.0, 0.0, 2.0]

    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).data.tolist() == [0.5]

    def test_sigmoid_extremes_are_finite(self):
        out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert out.tolist() == [0.0, 1.0]

    def test_softmax_uniform(self):
        assert T.softmax(Tensor([3.0, 3.0, 3.0, 3.0])).data.tolist() == [0.25] * 4

    def test_softmax_bad_axis(self):
        with pytest.raises(ShapeError):
            T.softmax(Tensor(np.zeros((2, 3))), axis=2)

    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    @settings(max_examples=50, deadline=None)
    def test_softmax_rows_and_shift_invariance(self, x, c):
        y = T.softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)
        y2 = T.softmax(Tensor(x + c), axis=1).data
        assert np.max(np.abs(y - y2)) <= 1e-9

    @given(arrays(np.float64, (4, 6), elements=st.floats(-1e6, 1e6)))
    @settings(max_examples=50, deadline=None)
    def test_relu_idempotent(self, x):
        once = T.relu(Tensor(x)).data
        assert np.array_equal(T.relu(Tensor(once)).data, once)

    @pytest.mark.parametrize("kind", ["sigmoid", "softmax", "relu"])
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, kind, seed):
        r = np.random.default_rng(seed)
        x = param(r, 3, 4)
        probe = Probe(r)
        assert grad_check(lambda: probe(T.activation(x, kind, axis=1)), [x]) < 1e-6

    @pytest.mark.parametrize("seed", SEEDS)
    def test_log_softmax_gradient(self, seed):
        r = np.random.default_rng(seed)
        x = param(r, 3, 4)
        probe = Probe(r)
        assert grad_check(lambda: probe(T.log_softmax(x, axis=1)), [x]) < 1e-6


class TestBatchNorm:
    def _bn(self, c, dtype=np.float64):
        return BatchNorm2d(c, dtype)

    def test_constant_input_gives_zero(self):
        bn = self._bn(2).train()
        out = bn(Tensor(np.full((2, 2, 3, 3), 7.0)))
        assert np.all(out.data == 0.0)

    def test_zero_gamma_gives_beta(self, rng):
        bn = self._bn(3).train()
        bn.weight.data[:] = 0.0
        bn.bias.data[:] = [1.0, -2.0, 0.5]
        out = bn(Tensor(rng.normal(size=(4, 3, 2, 2))))
        for c, b in enumerate([1.0, -2.0, 0.5]):
            assert np.all(out.data[:, c] == b)

    def test_normalized_statistics(self, rng):
        bn = self._bn(3).train()
        out = bn(Tensor(rng.normal(3.0, 2.5, size=(8, 3, 5, 5)))).data
        assert np.all(np.abs(out.mean(axis=(0, 2, 3))) <= 1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_stats_update_and_eval(self, rng):
        bn = self._bn(2).train()
        x = rng.normal(1.0, 3.0, size=(6, 2, 4, 4))
        bn(Tensor(x))
        mu, var = x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3), ddof=1)
        np.testing.assert_allclose(bn.running_mean, 0.1 * mu, atol=1e-12)
        np.testing.assert_allclose(bn.running_var, 0.9 + 0.1 * var, atol=1e-12)
        bn.eval()
        out = bn(Tensor(x)).data
        expect = (x - bn.running_mean[None, :, None, None]) / np.sqrt(bn.running_var[None, :, None, None] + 1e-5)
        np.testing.assert_allclose(out, expect, atol=1e-12)

    def test_single_value_per_channel_rejected(self):
        bn = self._bn(2).train()
        with pytest.raises(ShapeError):
            bn(Tensor(np.zeros((1, 2, 1, 1))))

    @pytest.mark.parametrize("training", [True, False])
    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, training, seed):
        r = np.random.default_rng(seed)
        bn = self._bn(3).train(training)
        bn.running_mean[:] = r.normal(size=3)
        bn.running_var[:] = r.uniform(0.5, 2.0, size=3)
        bn.weight.data[:] = r.normal(size=3)
        bn.bias.data[:] = r.normal(size=3)
        x = param(r, 4, 3, 3, 3)
        probe = Probe(r)
        assert grad_check(lambda: probe(bn(x)), [x, bn.weight, bn.bias]) < 1e-6


class TestLinear:
    def test_zero_weight(self):
        out = T.linear(Tensor(np.ones((3, 2))), Tensor(np.zeros((2, 2))), Tensor([1.0, -1.0]))
        assert out.data.tolist() == [[1.0, -1.0]] * 3

    def test_identity(self, rng):
        x = rng.normal(size=(4, 3))
        out = T.linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert np.array_equal(out.data, x)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matches_triple_loop(self, seed):
        r = np.random.default_rng(seed)
        x, w, b = r.normal(size=(4, 5)), r.normal(size=(3, 5)), r.normal(size=3)
        np.testing.assert_allclose(T.linear(Tensor(x), Tensor(w), Tensor(b)).data, linear_loops(x, w, b),
                                   atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.linear(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(4)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradients(self, seed):
        r = np.random.default_rng(seed)
        x, w, b = param(r, 4, 5), param(r, 3, 5), param(r, 3)
        probe = Probe(r)
        assert grad_check(lambda: probe(T.linear(x, w, b)), [x, w, b]) < 1e-6


class TestComposites:
    @pytest.mark.parametrize("seed", SEEDS)
    def test_elementwise_broadcast_and_reshape(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = param(r, 2, 3, 4), param(r, 1, 3, 1), param(r, 4)
        probe = Probe(r)

        def loss():
            y = (a * b + c) / (T.exp(b) + 1.0) - a
            y = T.concat([y, T.mean(a, axis=1, keepdims=True)], axis=1)
            return probe(T.reduce_max(y.reshape(2, 4, 4).transpose(0, 2, 1), axis=1))

        assert grad_check(loss, [a, b, c]) < 1e-6

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matmul_and_gather(self, seed):
        r = np.random.default_rng(seed)
        a, b = param(r, 2, 3, 4, 5), param(r, 5, 6)
        idx = r.integers(0, 6, size=(4, 4))
        probe = Probe(r)
        assert grad_check(lambda: probe(T.take_along_last(a @ b, idx)), [a, b]) < 1e-6

    def test_take_along_last_values(self):
        x = Tensor(np.arange(6.0).reshape(2, 3))
        out = T.take_along_last(x, np.array([[2, 2], [0, 1]]))
        assert out.data.tolist() == [[2.0, 2.0], [3.0, 4.0]]


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        backward(x * x)
        assert x.grad == 6.0

    def test_relu_sum(self):
        x = Tensor([-1.0, 2.0], requires_grad=True)
        backward(T.relu(x).sum())
        assert x.grad.tolist() == [0.0, 1.0]

    def test_untouched_inputs_get_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([5.0], requires_grad=True)
        backward((x * 2.0).sum(), inputs=[x, y])
        assert x.grad.tolist() == [2.0, 2.0]
        assert y.grad.tolist() == [0.0]

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GraphError):
            backward(x * 2.0)

    def test_loss_not_on_tape(self):
        with pytest.raises(GraphError):
            backward(Tensor(1.0))

    def test_shared_subexpression_visited_once(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x
        backward(y * y + y)  # d/dx (x^4 + x^2) = 4x^3 + 2x
        assert x.grad == 36.0

    def test_tape_is_reverse_execution_order(self):
        x = Tensor(1.0, requires_grad=True)
        a = x * 2.0
        b = a + 1.0
        c = b * a
        tape = T.GradTape(c)
        seqs = [n._seq for n in tape.reversed()]
        assert seqs == sorted(seqs, reverse=True)
        assert [id(n) for n in tape.reversed()] == [id(c), id(b), id(a), id(x)]

    def test_no_grad_records_nothing(self):
        x = Tensor(1.0, requires_grad=True)
        with T.no_grad():
            y = x * 3.0
        assert not y.requires_grad

    def test_nonfinite_is_an_error(self):
        with pytest.raises(NumericalError):
            T.log(Tensor([0.0, 1.0]) * 0.0)


class TestFiniteDiff:
    def test_sum(self, rng):
        x = Tensor(rng.normal(size=(3, 2)))
        np.testing.assert_allclose(finite_diff_grad(lambda t: t.sum(), x), 1.0, atol=1e-9)

    def test_square(self):
        x = Tensor(np.array(3.0))
        est = finite_diff_grad(lambda t: t * t, x, 1e-5)
        assert abs(float(est) - 6.0) <= 1e-8

    def test_restores_data(self, rng):
        data = rng.normal(size=(4,))
        x = Tensor(data.copy())
        finite_diff_grad(lambda t: (t * t).sum(), x)
        assert x.data.tobytes() == data.tobytes()

    def test_non_scalar(self):
        with pytest.raises(GraphError):
            finite_diff_grad(lambda t: t * 2.0, Tensor(np.ones(2)))
