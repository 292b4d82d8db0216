"""Unit tests for the autodiff core: values, gradients, and error paths."""

import numpy as np
import pytest

from videodms import tensor as tz
from videodms.gradcheck import grad_check
from videodms.tensor import (Tensor, ContractError, DimensionError, backward,
                             batch_norm, clamp, concat, conv2d, matmul,
                             max_pool2, no_grad, relu, reshape, sigmoid,
                             softmax_lastdim, tmean, transpose_last_two, tsum)


def leaf(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def scalarize(t):
    # a fixed random projection gives every element a distinct weight
    w = np.linspace(0.3, 1.7, t.data.size).reshape(t.shape)
    return tsum(t * w)


class TestValues:
    def test_add_broadcast(self, rng):
        a = Tensor(rng.standard_normal((3, 4)))
        b = Tensor(rng.standard_normal((4,)))
        np.testing.assert_allclose((a + b).data, a.data + b.data)

    def test_matmul_value(self, rng):
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 2))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)

    def test_softmax_rows_sum_to_one(self, rng):
        s = softmax_lastdim(Tensor(rng.standard_normal((6, 9))))
        np.testing.assert_allclose(s.data.sum(axis=-1), np.ones(6), atol=1e-12)

    def test_sigmoid_extremes_are_finite(self):
        s = sigmoid(Tensor(np.array([-1e4, 0.0, 1e4])))
        assert np.all(np.isfinite(s.data))
        np.testing.assert_allclose(s.data[1], 0.5)

    def test_transpose_last_two(self, rng):
        a = rng.standard_normal((2, 3, 4))
        np.testing.assert_allclose(transpose_last_two(Tensor(a)).data,
                                   a.transpose(0, 2, 1))

    def test_float32_graph_stays_float32(self):
        a = Tensor(np.ones((3, 3), np.float32))
        out = tmean(sigmoid(a * 0.5 - 0.25) / 3.0)
        assert out.dtype == np.float32

    def test_conv2d_matches_direct_computation(self, rng):
        x = rng.standard_normal((2, 6, 5, 3))
        w = rng.standard_normal((3, 3, 3, 4))
        out = conv2d(Tensor(x), Tensor(w), padding="same").data
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        ref = np.zeros((2, 6, 5, 4))
        for i in range(3):
            for j in range(3):
                ref += xp[:, i:i + 6, j:j + 5, :] @ w[i, j]
        np.testing.assert_allclose(out, ref, atol=1e-10)

    def test_max_pool_value(self):
        x = np.arange(16, dtype=float).reshape(1, 4, 4, 1)
        out = max_pool2(Tensor(x)).data
        np.testing.assert_allclose(out[0, :, :, 0], [[5, 7], [13, 15]])

    def test_max_pool_odd_dims_replicate(self):
        x = np.arange(9, dtype=float).reshape(1, 3, 3, 1)
        out = max_pool2(Tensor(x)).data
        assert out.shape == (1, 2, 2, 1)
        np.testing.assert_allclose(out[0, :, :, 0], [[4, 5], [7, 8]])


class TestGradients:
    def check(self, fn, *shapes, seed=0, tol=1e-7):
        rng = np.random.default_rng(seed)
        inputs = [leaf(rng, s) for s in shapes]
        assert grad_check(lambda *ts: scalarize(fn(*ts)), inputs) < tol

    def test_arithmetic_chain(self, rng):
        self.check(lambda a, b: (a * b + a) / (b * b + 2.0), (3, 4), (3, 4))

    def test_broadcast_grads(self):
        self.check(lambda a, b: a * b, (4, 5), (5,))

    def test_matmul(self):
        self.check(matmul, (4, 3), (3, 5))

    def test_batched_matmul(self):
        self.check(matmul, (2, 4, 3), (3, 5))

    def test_relu_sigmoid_softmax(self):
        self.check(lambda a: softmax_lastdim(sigmoid(relu(a))), (3, 6), seed=3)

    def test_clamp(self):
        self.check(lambda a: clamp(a, -0.5, 0.5), (17,))

    def test_reshape_transpose_concat(self):
        self.check(lambda a, b: concat(
            [reshape(a, (2, 6)), transpose_last_two(b)], axis=0),
            (3, 4), (6, 2))

    def test_getitem_fancy(self):
        idx = np.array([0, 2, 2, 1])
        self.check(lambda a: a[idx], (4, 3))

    def test_reductions(self):
        self.check(lambda a: tsum(a, axis=0) * tmean(a, axis=(0, 1)), (3, 4))

    def test_conv2d_same_and_valid(self):
        self.check(lambda x, w: conv2d(x, w, padding="same"), (2, 5, 4, 3), (3, 3, 3, 2))
        self.check(lambda x, w: conv2d(x, w, padding="valid"), (2, 5, 4, 2), (1, 2, 2, 3))

    def test_conv2d_bias(self):
        self.check(lambda x, w, b: conv2d(x, w, b), (1, 4, 4, 2), (3, 3, 2, 2), (2,))

    def test_max_pool_even_and_odd(self):
        self.check(max_pool2, (2, 4, 6, 3))
        self.check(max_pool2, (2, 5, 7, 3), seed=5)

    def test_batch_norm_train(self):
        rng = np.random.default_rng(2)
        x = leaf(rng, (6, 3))
        g = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
        b = leaf(rng, (3,))
        rm, rv = np.zeros(3), np.ones(3)
        fn = lambda x_, g_, b_: scalarize(batch_norm(x_, g_, b_, rm, rv, mode="train"))
        assert grad_check(fn, [x, g, b]) < 1e-7

    def test_grad_accumulates_on_leaves_only(self, rng):
        a = leaf(rng, (3,))
        h = a * 2.0
        out = tsum(h * h)
        backward(out)
        assert a.grad is not None
        assert h.grad is None


class TestStatefulOps:
    def test_batch_norm_eval_uses_running_stats(self, rng):
        x = Tensor(rng.standard_normal((5, 2)) * 3 + 1)
        g = Tensor(np.ones(2))
        b = Tensor(np.zeros(2))
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
        out = batch_norm(x, g, b, rm, rv, mode="eval")
        ref = (x.data - rm) / np.sqrt(rv + 1e-5)
        np.testing.assert_allclose(out.data, ref, atol=1e-12)

    def test_batch_norm_running_update(self, rng):
        x = rng.standard_normal((8, 2))
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                   rm, rv, mode="train", momentum=0.1)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=0, ddof=1), atol=1e-12)

    def test_no_grad_builds_no_graph(self, rng):
        a = leaf(rng, (3,))
        with no_grad():
            out = a * 2.0 + 1.0
        assert out._backward is None


class TestErrors:
    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"3, 4.*5, 2"):
            matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((5, 2))))

    def test_backward_requires_scalar(self, rng):
        a = leaf(rng, (3,))
        with pytest.raises(ContractError):
            backward(a * 2.0)

    def test_transpose_needs_rank_two(self):
        with pytest.raises(DimensionError):
            transpose_last_two(Tensor(np.ones(4)))

    def test_conv_same_rejects_even_kernel(self):
        with pytest.raises(ContractError):
            conv2d(Tensor(np.ones((1, 4, 4, 1))), Tensor(np.ones((2, 2, 1, 1))))

    def test_conv_rejects_stride(self):
        with pytest.raises(ContractError):
            conv2d(Tensor(np.ones((1, 4, 4, 1))), Tensor(np.ones((3, 3, 1, 1))),
                   stride=2)

    def test_conv_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.ones((1, 4, 4, 2))), Tensor(np.ones((3, 3, 3, 1))))

    def test_batch_norm_needs_two_samples(self):
        rm, rv = np.zeros(2), np.ones(2)
        with pytest.raises(ContractError):
            batch_norm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)),
                       Tensor(np.zeros(2)), rm, rv, mode="train")
