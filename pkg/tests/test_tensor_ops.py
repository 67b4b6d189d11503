"""Forward semantics of the tensor engine: values, dtypes, broadcasting,
graph bookkeeping, and the failure modes that must stay loud."""

import numpy as np
import pytest

from lapx.engine import (
    GraphConsumedError,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    is_grad_enabled,
    matmul,
    mul,
    no_grad,
    record_tape,
    reduce_max,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    sub,
    sum_all,
    tensor,
    transpose,
)
from lapx.engine.convops import batchnorm, conv2d, maxpool2x2, upsample_nearest2x


def rand(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


def test_tensor_defaults_to_float32():
    t = tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float32
    assert not t.requires_grad


def test_tensor_preserves_float64_arrays():
    # the finite-difference shadow path depends on float64 staying float64
    a = np.ones((2, 2), dtype=np.float64)
    assert Tensor(a).data.dtype == np.float64


def test_tensor_preserves_numpy_scalar_dtype():
    # 0-d reductions produce numpy scalars; their dtype must survive
    s = np.float64(3.5)
    assert Tensor(s).data.dtype == np.float64


def test_elementwise_values():
    rng = np.random.default_rng(0)
    a, b = rand(rng, 3, 4), rand(rng, 3, 4)
    np.testing.assert_allclose(add(tensor(a), tensor(b)).data, a + b, rtol=1e-6)
    np.testing.assert_allclose(sub(tensor(a), tensor(b)).data, a - b, rtol=1e-6)
    np.testing.assert_allclose(mul(tensor(a), tensor(b)).data, a * b, rtol=1e-6)
    np.testing.assert_allclose(scale(tensor(a), 2.5).data, a * 2.5, rtol=1e-6)


def test_broadcasting_matches_numpy():
    rng = np.random.default_rng(1)
    a = rand(rng, 2, 3, 4)
    b = rand(rng, 1, 3, 1)
    np.testing.assert_allclose(add(tensor(a), tensor(b)).data, a + b, rtol=1e-6)
    np.testing.assert_allclose(mul(tensor(a), tensor(b)).data, a * b, rtol=1e-6)


def test_broadcast_gradient_reduces_to_leaf_shape():
    a = tensor(np.ones((2, 3, 4), np.float32), requires_grad=True)
    b = tensor(np.ones((1, 3, 1), np.float32), requires_grad=True)
    backward(sum_all(mul(a, b)))
    assert a.grad.shape == (2, 3, 4)
    assert b.grad.shape == (1, 3, 1)
    np.testing.assert_allclose(b.grad, np.full((1, 3, 1), 8.0))


def test_matmul_batched():
    rng = np.random.default_rng(2)
    a, b = rand(rng, 5, 3, 4), rand(rng, 5, 4, 2)
    np.testing.assert_allclose(matmul(tensor(a), tensor(b)).data, a @ b,
                               rtol=1e-5, atol=1e-6)


def test_relu_sigmoid_values():
    x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0], np.float32)
    np.testing.assert_allclose(relu(tensor(x)).data, np.maximum(x, 0.0))
    np.testing.assert_allclose(sigmoid(tensor(x)).data, 1.0 / (1.0 + np.exp(-x)),
                               rtol=1e-6)


def test_softmax_rows_is_rowwise_and_stable():
    x = np.array([[1000.0, 1000.0, 1000.0], [0.0, 1.0, 2.0]], np.float32)
    out = softmax_rows(tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=-1), [1.0, 1.0], rtol=1e-6)
    np.testing.assert_allclose(out[0], [1 / 3] * 3, rtol=1e-6)
    assert np.isfinite(out).all()


def test_reshape_transpose_concat_values():
    rng = np.random.default_rng(3)
    a = rand(rng, 2, 3, 4)
    np.testing.assert_array_equal(reshape(tensor(a), (6, 4)).data, a.reshape(6, 4))
    np.testing.assert_array_equal(transpose(tensor(a), (2, 0, 1)).data,
                                  a.transpose(2, 0, 1))
    b = rand(rng, 2, 5, 4)
    np.testing.assert_array_equal(concat([tensor(a), tensor(b)], axis=1).data,
                                  np.concatenate([a, b], axis=1))


def test_reductions_match_numpy():
    rng = np.random.default_rng(4)
    a = rand(rng, 3, 4, 5)
    np.testing.assert_allclose(reduce_sum(tensor(a), axis=1).data, a.sum(axis=1),
                               rtol=1e-6)
    np.testing.assert_allclose(
        reduce_mean(tensor(a), axis=2, keepdims=True).data,
        a.mean(axis=2, keepdims=True), rtol=1e-6)
    np.testing.assert_allclose(reduce_max(tensor(a), axis=0).data, a.max(axis=0))
    np.testing.assert_allclose(sum_all(tensor(a)).data, a.sum(), rtol=1e-6)


def test_reduce_max_routes_gradient_to_argmax_only():
    x = tensor(np.array([[1.0, 5.0, 2.0]], np.float32), requires_grad=True)
    backward(sum_all(reduce_max(x, axis=1)))
    np.testing.assert_array_equal(x.grad, [[0.0, 1.0, 0.0]])


def test_backward_accumulates_across_uses():
    x = tensor(np.array([3.0], np.float32), requires_grad=True)
    y = add(mul(x, x), x)  # y = x^2 + x, dy/dx = 2x + 1 = 7
    backward(sum_all(y))
    np.testing.assert_allclose(x.grad, [7.0], rtol=1e-6)


def test_graph_is_single_use():
    x = tensor(np.ones(3, np.float32), requires_grad=True)
    y = sum_all(mul(x, x))
    backward(y)
    with pytest.raises(GraphConsumedError):
        backward(y)


def test_no_grad_blocks_graph_construction():
    x = tensor(np.ones(3, np.float32), requires_grad=True)
    assert is_grad_enabled()
    with no_grad():
        assert not is_grad_enabled()
        y = sum_all(mul(x, x))
    assert not y.requires_grad


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(5)
    x, w, b = rand(rng, 2, 3, 6, 5), rand(rng, 4, 3, 3, 3), rand(rng, 4)
    out = conv2d(tensor(x), tensor(w), tensor(b), stride=2, pad=1).data
    ref = np.zeros_like(out)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for n in range(2):
        for co in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                    ref[n, co, i, j] = (patch * w[co]).sum() + b[co]
    np.testing.assert_allclose(out, ref, rtol=1e-4, atol=1e-5)


def test_conv2d_grouped_is_blockwise():
    rng = np.random.default_rng(6)
    x, w = rand(rng, 1, 4, 5, 5), rand(rng, 4, 1, 3, 3)
    out = conv2d(tensor(x), tensor(w), None, pad=1, groups=4).data
    for c in range(4):
        ref = conv2d(tensor(x[:, c:c + 1]), tensor(w[c:c + 1]), None, pad=1).data
        np.testing.assert_allclose(out[:, c:c + 1], ref, rtol=1e-5, atol=1e-6)


def test_conv2d_rejects_bad_ranks():
    with pytest.raises(ShapeError):
        conv2d(tensor(np.ones((3, 4, 5), np.float32)),
               tensor(np.ones((2, 3, 1, 1), np.float32)))


def test_maxpool2x2_values_and_gradient_routing():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    t = tensor(x, requires_grad=True)
    out, indices = maxpool2x2(t)
    np.testing.assert_array_equal(out.data[0, 0], [[5, 7], [13, 15]])
    np.testing.assert_array_equal(indices[0, 0], [[5, 7], [13, 15]])
    backward(sum_all(out))
    expect = np.zeros((4, 4), np.float32)
    expect[1, 1] = expect[1, 3] = expect[3, 1] = expect[3, 3] = 1.0
    np.testing.assert_array_equal(t.grad[0, 0], expect)


def test_upsample_nearest2x_repeats_pixels():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]], np.float32)
    out = upsample_nearest2x(tensor(x)).data
    np.testing.assert_array_equal(
        out[0, 0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


def test_batchnorm_train_normalizes_and_updates_buffers():
    rng = np.random.default_rng(7)
    x = rand(rng, 4, 3, 5, 5) * 3.0 + 1.0
    gamma = tensor(np.ones(3, np.float32))
    beta = tensor(np.zeros(3, np.float32))
    rm, rv = np.zeros(3, np.float32), np.ones(3, np.float32)
    out = batchnorm(tensor(x), gamma, beta, rm, rv, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 2, 3)), 1.0, atol=1e-3)
    cnt = 4 * 5 * 5
    want_rm = 0.1 * x.mean(axis=(0, 2, 3))
    want_rv = 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * cnt / (cnt - 1)
    np.testing.assert_allclose(rm, want_rm, rtol=1e-5)
    np.testing.assert_allclose(rv, want_rv, rtol=1e-5)


def test_batchnorm_eval_uses_running_buffers():
    x = np.full((2, 1, 2, 2), 5.0, np.float32)
    gamma = tensor(np.array([2.0], np.float32))
    beta = tensor(np.array([1.0], np.float32))
    rm, rv = np.array([3.0], np.float32), np.array([4.0], np.float32)
    out = batchnorm(tensor(x), gamma, beta, rm, rv, training=False, eps=1e-5).data
    np.testing.assert_allclose(out, 2.0 * (5.0 - 3.0) / np.sqrt(4.0 + 1e-5) + 1.0,
                               rtol=1e-6)
    np.testing.assert_array_equal(rm, [3.0])  # eval must not touch the buffers


def test_record_tape_counts_conv_macs():
    x = tensor(np.ones((1, 2, 4, 4), np.float32))
    w = tensor(np.ones((3, 2, 3, 3), np.float32))
    with record_tape() as tape:
        conv2d(x, w, None, pad=1)
    macs = sum(node.macs for node in tape.nodes)
    assert macs == 3 * 2 * 3 * 3 * 4 * 4  # cout*cin*k*k per output pixel
