import numpy as np
import pytest
from hypothesis import given, strategies as st

from corrnet import layers as L
from corrnet.exceptions import DimensionError
from corrnet.verify import finite_diff


def naive_conv(x, f, b, stride, pad):
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    m, _, h, w = xp.shape
    co, _, kh, kw = f.shape
    oh, ow = (h - kh) // stride + 1, (w - kw) // stride + 1
    out = np.zeros((m, co, oh, ow))
    for n in range(m):
        for o in range(co):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = np.sum(patch * f[o]) + b[o]
    return out


def test_fc_forward_backward_by_hand():
    x = np.array([[1.0, 2.0]])
    p = L.FcParams(np.array([[1.0, 0.0, -1.0], [2.0, 1.0, 0.5]]), np.array([0.0, 1.0, 2.0]))
    np.testing.assert_array_equal(L.fc_forward(x, p), [[5.0, 3.0, 2.0]])
    gx, gw, gb = L.fc_backward(x, p, np.array([[1.0, 1.0, 1.0]]))
    np.testing.assert_array_equal(gx, [[0.0, 3.5]])
    np.testing.assert_array_equal(gw, [[1, 1, 1], [2, 2, 2]])
    np.testing.assert_array_equal(gb, [1, 1, 1])


def test_fc_shape_errors():
    p = L.FcParams(np.ones((3, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        L.fc_forward(np.ones((4, 2)), p)
    with pytest.raises(DimensionError):
        L.fc_backward(np.ones((4, 3)), p, np.ones((4, 3)))


@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 10_000))
def test_conv_matches_naive(stride, pad, seed):
    g = np.random.default_rng(seed)
    x = g.normal(size=(2, 3, 7, 6))
    p = L.ConvParams(g.normal(size=(4, 3, 3, 3)), g.normal(size=4), stride, pad)
    np.testing.assert_allclose(L.conv2d_forward(x, p), naive_conv(x, p.filters, p.bias, stride, pad),
                               rtol=1e-11, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (2, 1), (1, 2)])
def test_conv_backward_finite_diff(stride, pad, g):
    x = g.normal(size=(2, 2, 5, 5))
    p = L.ConvParams(g.normal(size=(3, 2, 3, 3)), g.normal(size=3), stride, pad)
    gy = g.normal(size=L.conv2d_forward(x, p).shape)
    gx, gf, gb = L.conv2d_backward(x, p, gy)
    f = lambda v: np.sum(L.conv2d_forward(v, p) * gy)  # noqa: E731
    np.testing.assert_allclose(gx, finite_diff(f, x), rtol=1e-6, atol=1e-8)
    ff = lambda v: np.sum(L.conv2d_forward(x, L.ConvParams(v, p.bias, stride, pad)) * gy)  # noqa: E731
    np.testing.assert_allclose(gf, finite_diff(ff, p.filters), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(gb, gy.sum(axis=(0, 2, 3)))


def test_conv_rejects_mismatch():
    p = L.ConvParams(np.ones((1, 2, 3, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        L.conv2d_forward(np.ones((1, 3, 5, 5)), p)
    with pytest.raises(DimensionError):
        L.conv2d_backward(np.ones((1, 2, 5, 5)), p, np.ones((1, 1, 2, 2)))


def test_relu():
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(L.relu(x), [0, 0, 2])
    np.testing.assert_array_equal(L.relu_backward(x, np.ones(3)), [0, 0, 1])


@pytest.mark.parametrize("kind", ["max", "avg"])
@pytest.mark.parametrize("k,stride,pad", [(2, 2, 0), (3, 2, 1), (3, 1, 0)])
def test_pool_backward_finite_diff(kind, k, stride, pad, g):
    x = g.normal(size=(2, 2, 6, 6))
    y, cache = L.pool2d_forward(x, kind, k, stride, pad)
    gy = g.normal(size=y.shape)
    dx = L.pool2d_backward(gy, cache)
    f = lambda v: np.sum(L.pool2d_forward(v, kind, k, stride, pad)[0] * gy)  # noqa: E731
    np.testing.assert_allclose(dx, finite_diff(f, x, h=1e-6), rtol=1e-5, atol=1e-8)


def test_pool_geometry_errors():
    x = np.ones((1, 1, 4, 4))
    with pytest.raises(DimensionError):
        L.pool2d_forward(x, "max", 2, 2, padding=2)
    with pytest.raises(DimensionError):
        L.pool2d_forward(x, "max", 5, 1)
    with pytest.raises(ValueError):
        L.pool2d_forward(x, "median", 2, 2)


def test_maxpool_padding_never_wins():
    x = -np.ones((1, 1, 2, 2))
    y, _ = L.pool2d_forward(x, "max", 2, 2, padding=1)
    assert np.all(y == -1.0)


@pytest.mark.parametrize("shape", [(6, 4), (4, 3, 3, 3)])
def test_batchnorm_train_normalizes_and_backward(shape, g):
    x = g.normal(2.0, 3.0, size=shape)
    c = shape[1]
    st_ = L.BatchNormState(g.normal(size=c), g.normal(size=c))
    y, cache = L.batchnorm_forward(x, st_, "train")
    axes = L._bn_axes(x)
    xhat = cache[0]
    np.testing.assert_allclose(xhat.mean(axis=axes), 0, atol=1e-12)
    np.testing.assert_allclose(xhat.var(axis=axes), 1, rtol=1e-5)
    gy = g.normal(size=shape)
    dx, dgamma, dbeta = L.batchnorm_backward(gy, st_, cache)

    def f(v):
        s = L.BatchNormState(st_.gamma, st_.beta)
        return np.sum(L.batchnorm_forward(v, s, "train")[0] * gy)

    np.testing.assert_allclose(dx, finite_diff(f, x), rtol=1e-5, atol=1e-8)
    np.testing.assert_allclose(dbeta, gy.sum(axis=axes))


def test_batchnorm_running_stats_and_eval(g):
    x = g.normal(1.0, 2.0, size=(50, 3))
    st_ = L.BatchNormState.fresh(3)
    L.batchnorm_forward(x, st_, "train")
    np.testing.assert_allclose(st_.running_mean, 0.1 * x.mean(0))
    np.testing.assert_allclose(st_.running_var, 0.9 + 0.1 * x.var(0, ddof=1))
    y, _ = L.batchnorm_forward(x, st_, "eval")
    np.testing.assert_allclose(y, (x - st_.running_mean) / np.sqrt(st_.running_var + st_.eps))
    with pytest.raises(ValueError):
        L.batchnorm_forward(x[:1], st_, "train")
    with pytest.raises(ValueError):
        L.batchnorm_forward(x, st_, "test")


def test_dropout_inverted_scaling():
    x = np.ones((400, 250))
    y = L.dropout(x, L.DropoutSpec(0.3), seed=4)
    assert abs(y.mean() - 1.0) < 0.01
    assert set(np.unique(y)) <= {0.0, 1 / 0.7}
    assert abs((y == 0).mean() - 0.3) < 0.01
    np.testing.assert_array_equal(L.dropout(x, L.DropoutSpec(0.3, "eval"), 4), x)
    np.testing.assert_array_equal(L.dropout_mask((3, 3), 0.5, 9), L.dropout_mask((3, 3), 0.5, 9))


def test_dropout_spec_validation():
    with pytest.raises(ValueError):
        L.DropoutSpec(1.0)
    with pytest.raises(ValueError):
        L.DropoutSpec(0.2, "sometimes")


def test_softmax_xent_values_and_grad(g):
    logits = g.normal(size=(5, 4))
    labels = np.array([0, 3, 1, 1, 2])
    loss, grad = L.softmax_xent(logits, labels)
    p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    assert loss == pytest.approx(-np.mean(np.log(p[np.arange(5), labels])))
    num = finite_diff(lambda z: L.softmax_xent(z, labels)[0], logits)
    np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-10)


def test_softmax_xent_stable_and_validated():
    loss, grad = L.softmax_xent(np.array([[1000.0, 0.0]]), np.array([0]))
    assert loss == pytest.approx(0.0) and np.all(np.isfinite(grad))
    with pytest.raises(ValueError):
        L.softmax_xent(np.zeros((2, 3)), np.array([0, 3]))
    with pytest.raises(DimensionError):
        L.softmax_xent(np.zeros((2, 3)), np.array([0]))


def test_softmax_limits():
    loss, _ = L.softmax_xent(np.zeros((3, 10)), np.array([0, 4, 9]))
    assert loss == pytest.approx(np.log(10))
    logits = np.zeros((2, 4))
    logits[[0, 1], [1, 2]] = 20.0
    assert L.softmax_xent(logits, np.array([1, 2]))[0] < 1e-3


def test_batchnorm_zero_gamma_gives_beta(g):
    st_ = L.BatchNormState(np.zeros(3), np.array([1.0, -2.0, 0.5]))
    y, _ = L.batchnorm_forward(g.normal(size=(5, 3)), st_, "train")
    np.testing.assert_array_equal(y, np.tile(st_.beta, (5, 1)))


def test_pool_simple_cases():
    y, _ = L.pool2d_forward(np.full((1, 1, 4, 4), 3.0), "avg", 2, 2)
    assert np.all(y == 3.0)
    x = np.zeros((1, 1, 2, 2))
    x[0, 0, 1, 0] = 7.0
    assert L.pool2d_forward(x, "max", 2, 2)[0][0, 0, 0, 0] == 7.0


def test_relu_identity_on_positive(g):
    x = g.uniform(0.1, 5, size=(3, 4))
    np.testing.assert_array_equal(L.relu(x), x)
