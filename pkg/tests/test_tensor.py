import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alps import tensor as T
from alps.tensor import GradientError, ShapeError, Tensor
from oracles import (conv2d_loops, conv2d_transpose_scatter, finite_difference, gap_loops, matmul_loops,
                     mse_loops, relative_error)


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# ------------------------------------------------------------------ basics


def test_tensor_casts_to_float32_by_default():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(2)).dtype == np.float64


def test_item_requires_single_element():
    assert Tensor([[2.5]]).item() == 2.5
    with pytest.raises(GradientError):
        Tensor([1.0, 2.0]).item()


def test_sum_backward_gives_ones():
    x = t64(np.random.default_rng(0).normal(size=(2, 3, 4)))
    T.backward(T.sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))


def test_mse_against_zero_gradient_is_x():
    x = t64([1.0, 2.0])
    loss = T.mse_loss(x, Tensor(np.zeros(2)))
    T.backward(loss)
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


def test_backward_rejects_non_scalar():
    x = t64(np.ones(3))
    with pytest.raises(GradientError):
        T.backward(T.mul(x, 2.0))


def test_backward_rejects_disconnected_loss():
    with pytest.raises(GradientError):
        T.backward(Tensor(1.0))


def test_gradients_accumulate_until_zeroed():
    x = t64([1.0, -2.0])
    for _ in range(3):
        T.backward(T.sum(T.mul(x, x)))
    np.testing.assert_allclose(x.grad, 3 * 2 * x.data)
    x.zero_grad()
    T.backward(T.sum(T.mul(x, x)))
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_no_grad_records_nothing():
    x = t64([1.0, 2.0])
    with T.no_grad():
        y = T.sum(T.mul(x, x))
    assert not y.requires_grad and y.is_leaf
    assert T.grad_enabled()


def test_graph_is_topologically_ordered_and_unique():
    x = t64(np.ones(4))
    a = T.mul(x, x)
    b = T.add(a, x)
    loss = T.sum(T.add(b, a))
    order = T.graph(loss)
    position = {id(n): i for i, n in enumerate(order)}
    assert len(position) == len(order)
    for node in order:
        for parent in node.parents:
            assert position[id(parent)] < position[id(node)]
    # shared subexpression "a" is visited once; the diamond still gets both paths
    T.backward(loss)
    np.testing.assert_allclose(x.grad, 4 * x.data + 1)


def test_leaf_without_requires_grad_gets_no_grad():
    x, c = t64([1.0, 2.0]), t64([3.0, 4.0], grad=False)
    T.backward(T.sum(T.mul(x, c)))
    assert c.grad is None
    np.testing.assert_allclose(x.grad, [3.0, 4.0])


# ------------------------------------------------------------ conv2d


def test_conv2d_identity_kernel():
    out = T.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, np.ones((1, 1, 3, 3)))


def test_conv2d_shape_example():
    out = T.conv2d(Tensor(np.zeros((1, 1, 28, 28))), Tensor(np.zeros((8, 1, 3, 3))), Tensor(np.zeros(8)),
                   stride=2, padding=1)
    assert out.shape == (1, 8, 14, 14)


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(0)
    x, k, b = rng.normal(size=(1, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    out = T.conv2d(Tensor(x, dtype=np.float32), Tensor(k, dtype=np.float32), Tensor(b, dtype=np.float32))
    np.testing.assert_allclose(out.data, conv2d_loops(x, k, b, 1, 0), atol=1e-5)


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (2, 1), (3, 2)])
def test_conv2d_strided_padded_matches_loop_oracle(stride, padding):
    rng = np.random.default_rng(stride * 10 + padding)
    x, k, b = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(2, 3, 3, 2)), rng.normal(size=2)
    out = T.conv2d(Tensor(x), Tensor(k), Tensor(b), stride, padding)
    np.testing.assert_allclose(out.data, conv2d_loops(x, k, b, stride, padding), atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv2d_kernel_larger_than_input():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


# -------------------------------------------------- conv2d_transpose


def test_transpose_single_pixel_broadcast():
    out = T.conv2d_transpose(Tensor(np.full((1, 1, 1, 1), 0.7)), Tensor(np.ones((1, 1, 2, 2))),
                             Tensor(np.zeros(1)))
    np.testing.assert_allclose(out.data, np.full((1, 1, 2, 2), 0.7))


def test_transpose_shape_example():
    out = T.conv2d_transpose(Tensor(np.zeros((1, 1, 7, 7))), Tensor(np.zeros((1, 1, 4, 4))), stride=2, padding=1)
    assert out.shape == (1, 1, 14, 14)


@pytest.mark.parametrize("stride,padding,kernel", [(1, 0, 3), (2, 1, 4), (2, 0, 3), (3, 1, 2), (1, 1, 3)])
def test_transpose_matches_scatter_oracle(stride, padding, kernel):
    rng = np.random.default_rng(kernel + 7 * stride + padding)
    x, k, b = rng.normal(size=(2, 3, 4, 3)), rng.normal(size=(3, 2, kernel, kernel)), rng.normal(size=2)
    out = T.conv2d_transpose(Tensor(x), Tensor(k), Tensor(b), stride, padding)
    np.testing.assert_allclose(out.data, conv2d_transpose_scatter(x, k, b, stride, padding), atol=1e-12)


def test_transpose_channel_mismatch():
    with pytest.raises(ShapeError):
        T.conv2d_transpose(Tensor(np.zeros((1, 2, 3, 3))), Tensor(np.zeros((3, 1, 2, 2))))


@pytest.mark.parametrize("seed", range(10))
def test_adjoint_identity(seed):
    rng = np.random.default_rng(seed)
    stride, padding, kh, kw = (int(v) for v in (rng.integers(1, 3), rng.integers(0, 2), rng.integers(1, 5),
                                                rng.integers(1, 5)))
    c, f = rng.integers(1, 4), rng.integers(1, 4)
    # compatible sizes: the transpose maps the conv output back onto exactly H x W
    h = next(v for v in range(max(kh, 3) + int(rng.integers(0, 4)), 20) if (v + 2 * padding - kh) % stride == 0)
    w = next(v for v in range(max(kw, 3) + int(rng.integers(0, 4)), 20) if (v + 2 * padding - kw) % stride == 0)
    x = rng.normal(size=(2, c, h, w)).astype(np.float32)
    k = rng.normal(size=(f, c, kh, kw)).astype(np.float32)
    conv = T.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).data
    y = rng.normal(size=conv.shape).astype(np.float32)
    # conv2d maps C -> F with kernel (F, C, ..); the same array read as (C_in=F, F_out=C) maps back
    back = T.conv2d_transpose(Tensor(y), Tensor(k), stride=stride, padding=padding).data
    assert back.shape == x.shape
    lhs = np.sum(conv * y, dtype=np.float64)
    rhs = np.sum(x * back, dtype=np.float64)
    assert abs(lhs - rhs) <= 1e-4 * max(1.0, abs(lhs))


def test_transpose_backward_is_conv2d_of_upstream():
    rng = np.random.default_rng(3)
    x = t64(rng.normal(size=(2, 3, 4, 4)))
    k = rng.normal(size=(3, 2, 4, 4))
    out = T.conv2d_transpose(x, Tensor(k), stride=2, padding=1)
    g = rng.normal(size=out.shape)
    T.backward(T.sum(T.mul(out, Tensor(g))))
    np.testing.assert_allclose(x.grad, T.conv2d(Tensor(g), Tensor(k), stride=2, padding=1).data, atol=1e-12)


@pytest.mark.parametrize("kh", [1, 2, 3, 4])
@pytest.mark.parametrize("kw", [1, 2, 3, 4])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", [0, 1])
def test_output_shape_formulas_exhaustive(kh, kw, stride, padding):
    for h in range(max(kh - 2 * padding, 1), 8):
        for w in range(max(kw - 2 * padding, 1), 8):
            x = Tensor(np.zeros((1, 1, h, w)))
            out = T.conv2d(x, Tensor(np.zeros((2, 1, kh, kw))), stride=stride, padding=padding)
            assert out.shape == (1, 2, (h + 2 * padding - kh) // stride + 1, (w + 2 * padding - kw) // stride + 1)
            ho, wo = (h - 1) * stride - 2 * padding + kh, (w - 1) * stride - 2 * padding + kw
            if ho >= 1 and wo >= 1:
                out = T.conv2d_transpose(x, Tensor(np.zeros((1, 2, kh, kw))), stride=stride, padding=padding)
                assert out.shape == (1, 2, ho, wo)


# ------------------------------------------------------ small layers


def test_gap_examples():
    np.testing.assert_array_equal(T.global_avg_pool(Tensor(np.full((2, 3, 4, 5), 3.5))).data, np.full((2, 3), 3.5))
    np.testing.assert_allclose(T.global_avg_pool(Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2))).data, [[2.5]])


def test_gap_matches_loop_oracle():
    x = np.random.default_rng(5).normal(size=(3, 4, 5, 6))
    np.testing.assert_allclose(T.global_avg_pool(Tensor(x)).data, gap_loops(x), atol=1e-6)


def test_dense_identity_and_bias():
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_allclose(T.dense(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    b = np.array([1.0, -2.0])
    np.testing.assert_array_equal(T.dense(Tensor(x), Tensor(np.zeros((4, 2))), Tensor(b)).data, np.tile(b, (3, 1)))


def test_dense_matches_loop_oracle():
    rng = np.random.default_rng(6)
    x, w, b = rng.normal(size=(3, 5)), rng.normal(size=(5, 4)), rng.normal(size=4)
    out = T.dense(Tensor(x, dtype=np.float32), Tensor(w, dtype=np.float32), Tensor(b, dtype=np.float32))
    np.testing.assert_allclose(out.data, matmul_loops(x, w, b), atol=1e-5)


def test_dense_shape_error():
    with pytest.raises(ShapeError):
        T.dense(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_activation_examples():
    np.testing.assert_array_equal(T.relu(Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
    np.testing.assert_allclose(T.leaky_relu(Tensor([-1.0, 3.0]), 0.2).data, [-0.2, 3.0])
    np.testing.assert_allclose(T.elementwise(Tensor([0.5]), "tanh").data, np.tanh([0.5]), rtol=1e-6)
    with pytest.raises(ValueError):
        T.elementwise(Tensor([0.5]), "softplus")


def test_sigmoid_is_stable_at_extremes():
    out = T.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


def test_mse_examples():
    p = Tensor([0.0, 0.0])
    assert T.mse_loss(p, Tensor([0.0, 0.0])).item() == 0.0
    assert T.mse_loss(p, Tensor([2.0, 0.0])).item() == 2.0


def test_mse_matches_loop_oracle():
    rng = np.random.default_rng(8)
    a, b = rng.normal(size=(4, 1, 3, 3)), rng.normal(size=(4, 1, 3, 3))
    assert abs(T.mse_loss(Tensor(a), Tensor(b)).item() - mse_loops(a, b)) < 1e-6


def test_mse_rejects_bad_arguments():
    with pytest.raises(ShapeError):
        T.mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(GradientError):
        T.mse_loss(Tensor(np.zeros(3)), t64(np.zeros(3)))


# ------------------------------------------------- gradient checks


def _check_grads(build, arrays, tol):
    """``build(*tensors)`` returns a scalar Tensor; compare backward with central differences."""
    leaves = [t64(a) for a in arrays]
    T.backward(build(*leaves))
    numeric = finite_difference(lambda: build(*[Tensor(a) for a in arrays]).item(), arrays)
    for leaf, num in zip(leaves, numeric):
        assert relative_error(leaf.grad, num) < tol


@pytest.mark.parametrize("case", range(5))
def test_conv2d_gradients_float64(case):
    rng = np.random.default_rng(case)
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x, k, b = rng.normal(size=(2, 2, 5, 4)), rng.normal(size=(3, 2, 3, 2)), rng.normal(size=3)
    proj = rng.normal(size=T.conv2d(Tensor(x), Tensor(k), stride=stride, padding=padding).shape)
    _check_grads(lambda x_, k_, b_: T.sum(T.mul(T.conv2d(x_, k_, b_, stride, padding), Tensor(proj))),
                 [x, k, b], 1e-6)


def test_gradients_float32_within_looser_bound():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(1, 2, 4, 4)).astype(np.float32)
    k = rng.normal(size=(2, 2, 3, 3)).astype(np.float32)
    xt, kt = Tensor(x, requires_grad=True), Tensor(k, requires_grad=True)
    proj = Tensor(rng.normal(size=(1, 2, 4, 4)).astype(np.float32))
    T.backward(T.sum(T.mul(T.tanh(T.conv2d(xt, kt, padding=1)), proj)))
    xd, kd = x.astype(np.float64), k.astype(np.float64)
    f = lambda: np.sum(np.tanh(T.conv2d(Tensor(xd), Tensor(kd), padding=1).data) * proj.data)  # noqa: E731
    nx, nk = finite_difference(f, [xd, kd])
    assert relative_error(xt.grad, nx) < 1e-3
    assert relative_error(kt.grad, nk) < 1e-3


@given(st.integers(0, 2 ** 31 - 1), st.sampled_from(["relu", "leaky_relu", "sigmoid", "tanh"]))
@settings(max_examples=30, deadline=None)
def test_elementwise_gradients_float64(seed, kind):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 1e-2] += 0.05  # keep finite differences away from the kinks
    proj = Tensor(rng.normal(size=(3, 4)))
    _check_grads(lambda x_: T.sum(T.mul(T.elementwise(x_, kind, 0.2), proj)), [x], 1e-6)


def test_leaky_relu_rejects_bad_slope():
    with pytest.raises(ValueError):
        T.leaky_relu(Tensor([1.0]), alpha=1.5)


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=20))
def test_forward_is_deterministic(values):
    x = Tensor(np.array(values).reshape(1, 1, 1, -1))
    k = Tensor(np.ones((1, 1, 1, 1)) * 0.3)
    a = T.sigmoid(T.conv2d(x, k)).data
    b = T.sigmoid(T.conv2d(x, k)).data
    assert a.tobytes() == b.tobytes()
