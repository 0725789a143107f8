"""Finite-difference checks for every backward rule in the autodiff engine."""
import numpy as np
import pytest

from mfseg import autodiff as ad
from mfseg.autodiff import Tensor


def fd_check(fn, arrays, h=1e-6, tol=1e-5):
    """Compare analytic gradients of scalar-valued fn(*tensors) with central differences."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    proj = np.random.default_rng(99).normal(size=out.data.shape)
    out.backward(proj)
    for k, (t, a) in enumerate(zip(tensors, arrays)):
        num = np.zeros_like(a)
        flat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = np.sum(fn(*[Tensor(x.copy()) for x in arrays]).data * proj)
            flat[i] = orig - h
            dn = np.sum(fn(*[Tensor(x.copy()) for x in arrays]).data * proj)
            flat[i] = orig
            num.reshape(-1)[i] = (up - dn) / (2 * h)
        scale = max(np.abs(num).max(), np.abs(t.grad).max(), 1e-8)
        err = np.abs(num - t.grad).max() / scale
        assert err < tol, f"input {k}: rel err {err:.3e}"


RNG = np.random.default_rng(1234)


def test_relu_grad():
    fd_check(ad.relu, [RNG.normal(size=(2, 3, 4, 4)) + 0.05])


def test_sigmoid_grad():
    fd_check(ad.sigmoid, [RNG.normal(size=(2, 2, 3, 3))])


def test_add_mul_grad():
    a = RNG.normal(size=(2, 3, 4, 4))
    b = RNG.normal(size=(2, 3, 4, 4))
    fd_check(ad.add, [a, b])
    fd_check(ad.mul, [a, b])


def test_mul_broadcast_grad():
    x = RNG.normal(size=(2, 3, 4, 4))
    scale = RNG.normal(size=(2, 3, 1, 1))
    gate = RNG.normal(size=(2, 1, 4, 4))
    fd_check(ad.mul, [x, scale])
    fd_check(ad.mul, [x, gate])


def test_concat_grad():
    a = RNG.normal(size=(2, 2, 3, 3))
    b = RNG.normal(size=(2, 3, 3, 3))
    fd_check(lambda x, y: ad.concat([x, y], axis=1), [a, b])


@pytest.mark.parametrize("stride,pad,dil", [(1, 1, 1), (2, 1, 1), (1, 0, 1), (2, 3, 1), (1, 2, 2)])
def test_conv2d_grad(stride, pad, dil):
    k = 3
    x = RNG.normal(size=(2, 3, 8, 6))
    w = RNG.normal(size=(4, 3, k, k))
    b = RNG.normal(size=(4,))
    fd_check(lambda X, W, B: ad.conv2d(X, W, B, stride, pad, dil), [x, w, b])


def test_conv2d_7x7_stride2():
    x = RNG.normal(size=(1, 1, 12, 8))
    w = RNG.normal(size=(2, 1, 7, 7))
    b = RNG.normal(size=(2,))
    fd_check(lambda X, W, B: ad.conv2d(X, W, B, 2, 3, 1), [x, w, b])


def test_conv_transpose2d_grad():
    x = RNG.normal(size=(2, 3, 4, 3))
    w = RNG.normal(size=(3, 2, 4, 4))
    b = RNG.normal(size=(2,))
    fd_check(lambda X, W, B: ad.conv_transpose2d(X, W, B, 2, 1), [x, w, b])


def test_conv_transpose2d_doubles_dims():
    x = Tensor(RNG.normal(size=(1, 2, 5, 7)))
    w = Tensor(RNG.normal(size=(2, 3, 4, 4)))
    y = ad.conv_transpose2d(x, w, None, 2, 1)
    assert y.data.shape == (1, 3, 10, 14)


def test_max_pool_grad():
    # ties have measure zero under a continuous draw
    fd_check(ad.max_pool2x2, [RNG.normal(size=(2, 2, 6, 4))])


def test_avg_pool3x3_grad():
    fd_check(ad.avg_pool3x3_same, [RNG.normal(size=(2, 2, 5, 4))])


def test_upsample_nearest_grad():
    fd_check(ad.upsample_nearest2x, [RNG.normal(size=(2, 2, 3, 4))])
    x = Tensor(np.arange(4.0).reshape(1, 1, 2, 2))
    y = ad.upsample_nearest2x(x)
    assert np.array_equal(y.data[0, 0], np.array([[0, 0, 1, 1], [0, 0, 1, 1], [2, 2, 3, 3], [2, 2, 3, 3]], dtype=float))


def test_global_avg_pool_grad():
    fd_check(ad.global_avg_pool, [RNG.normal(size=(2, 3, 4, 5))])


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_grad(training):
    x = RNG.normal(size=(3, 2, 4, 4))
    gamma = RNG.normal(size=(2,)) + 1.0
    beta = RNG.normal(size=(2,))
    rm = RNG.normal(size=(2,))
    rv = np.abs(RNG.normal(size=(2,))) + 0.5

    def fn(X, G, B):
        return ad.batch_norm(X, G, B, rm.copy(), rv.copy(), training)

    fd_check(fn, [x, gamma, beta], tol=1e-4)


def test_batch_norm_updates_running_stats():
    x = Tensor(RNG.normal(size=(4, 2, 5, 5)).astype(np.float64))
    g = Tensor(np.ones(2))
    b = Tensor(np.zeros(2))
    rm, rv = np.zeros(2), np.ones(2)
    ad.batch_norm(x, g, b, rm, rv, training=True, momentum=0.1)
    assert np.allclose(rm, 0.1 * x.data.mean(axis=(0, 2, 3)))
    assert np.allclose(rv, 0.9 + 0.1 * x.data.var(axis=(0, 2, 3)))


def test_dropout_grad_and_identity():
    def fn(X):
        return ad.dropout(X, 0.4, np.random.default_rng(7))

    fd_check(fn, [RNG.normal(size=(2, 2, 4, 4))])
    x = Tensor(RNG.normal(size=(1, 1, 3, 3)))
    assert ad.dropout(x, 0.0, np.random.default_rng(0)) is x


def test_dropout_scaling_preserves_expectation():
    rng = np.random.default_rng(5)
    x = Tensor(np.ones((1, 1, 200, 200)))
    y = ad.dropout(x, 0.3, rng)
    kept = y.data[y.data > 0]
    assert np.allclose(kept, 1.0 / 0.7)
    assert abs(y.data.mean() - 1.0) < 0.02


def test_sigmoid_stays_strictly_inside_unit_interval():
    x = Tensor(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
    y = ad.sigmoid(x).data
    assert np.all(y > 0.0) and np.all(y < 1.0)
    assert np.all(np.isfinite(y))


def test_composite_graph_grad():
    # small conv -> bn -> relu -> pool -> convT chain, end to end
    x = RNG.normal(size=(2, 1, 8, 8))
    w1 = RNG.normal(size=(3, 1, 3, 3))
    w2 = RNG.normal(size=(3, 2, 4, 4))

    def fn(X, W1, W2):
        h = ad.relu(ad.conv2d(X, W1, None, 1, 1))
        h = ad.max_pool2x2(h)
        return ad.sigmoid(ad.conv_transpose2d(h, W2, None, 2, 1))

    fd_check(fn, [x, w1, w2], tol=1e-4)


def test_backward_accumulates_shared_input():
    x = Tensor(RNG.normal(size=(2, 2, 2, 2)), requires_grad=True)
    y = ad.add(x, x)
    y.backward(np.ones_like(y.data))
    assert np.allclose(x.grad, 2.0)
