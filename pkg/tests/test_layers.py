import numpy as np
import pytest

from tractlabel.errors import ShapeError
from tractlabel.nn import Adam, BatchNorm1d, Conv1d, Linear, MaxPool1d, ReLU, softmax_xent
from tractlabel.nn.gradcheck import numeric_grad, relative_error


def _conv_oracle(x, W, b):
    """Direct triple loop, zero 'same' padding."""
    B, C, L = x.shape
    O, _, K = W.shape
    pad = K // 2
    out = np.zeros((B, O, L))
    for n in range(B):
        for o in range(O):
            for t in range(L):
                acc = b[o]
                for c in range(C):
                    for k in range(K):
                        j = t + k - pad
                        if 0 <= j < L:
                            acc += W[o, c, k] * x[n, c, j]
                out[n, o, t] = acc
    return out


def _layer_gradcheck(layer, x, rng, train=True):
    """Max relative error of input and parameter gradients of sum(r * y)."""
    r = rng.normal(size=layer.forward(x, train).shape)
    layer.zero_grad()
    layer.forward(x, train)
    dx = layer.backward(r)
    f = lambda: float((layer.forward(x, train) * r).sum())
    worst = relative_error(dx, numeric_grad(f, x)).max()
    for k, p in layer.params.items():
        worst = max(worst, relative_error(layer.grads[k], numeric_grad(f, p)).max())
    return worst


# ---------------------------------------------------------------- conv


def test_conv_identity_and_zero_kernel(rng):
    x = rng.normal(size=(2, 1, 9))
    c = Conv1d(1, 1, 1, rng, np.float64)
    c.params["W"][...] = 1.0
    c.params["b"][...] = 0.0
    np.testing.assert_array_equal(c.forward(x), x)
    c = Conv1d(1, 3, 3, rng, np.float64)
    c.params["W"][...] = 0.0
    c.params["b"][...] = [1, 2, 3]
    np.testing.assert_array_equal(c.forward(x), np.broadcast_to(np.array([1.0, 2, 3])[None, :, None], (2, 3, 9)))


def test_conv_matches_triple_loop(rng):
    for ksize in (3, 5):
        c = Conv1d(2, 4, ksize, rng, np.float64)
        c.params["b"][...] = rng.normal(size=4)
        x = rng.normal(size=(3, 2, 7))
        np.testing.assert_allclose(c.forward(x), _conv_oracle(x, c.params["W"], c.params["b"]), atol=1e-12)


def test_conv_gradients(rng):
    c = Conv1d(3, 2, 3, rng, np.float64)
    assert _layer_gradcheck(c, rng.normal(size=(2, 3, 6)), rng) < 1e-7


# ---------------------------------------------------------------- batchnorm


def test_bn_train_mode_standardizes(rng):
    bn = BatchNorm1d(4, np.float64)
    y = bn.forward(rng.normal(3, 5, size=(8, 4, 10)), train=True)
    np.testing.assert_allclose(y.mean(axis=(0, 2)), 0, atol=1e-6)
    np.testing.assert_allclose(y.var(axis=(0, 2)), 1, atol=1e-6)


def test_bn_eval_mode_is_affine(rng):
    bn = BatchNorm1d(3, np.float64)
    bn.params["gamma"][...] = [1, 2, 3]
    bn.params["beta"][...] = [0, -1, 1]
    x = rng.normal(size=(2, 3, 5))
    expected = x / np.sqrt(1 + 1e-5) * np.array([1, 2, 3])[None, :, None] + np.array([0, -1, 1])[None, :, None]
    np.testing.assert_allclose(bn.forward(x, train=False), expected, atol=1e-12)


def test_bn_running_stats_unbiased(rng):
    bn = BatchNorm1d(2, np.float64)
    x = rng.normal(size=(4, 2, 5))
    bn.forward(x, train=True)
    np.testing.assert_allclose(bn.buffers["running_mean"], 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(bn.buffers["running_var"], 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))


@pytest.mark.parametrize("train", [True, False])
def test_bn_gradients(rng, train):
    bn = BatchNorm1d(3, np.float64)
    bn.params["gamma"][...] = rng.uniform(0.5, 2, 3)
    bn.params["beta"][...] = rng.normal(size=3)
    assert _layer_gradcheck(bn, rng.normal(size=(4, 3, 5)), rng, train) < 1e-5


# ---------------------------------------------------------------- relu, pool, fc


def test_relu_example():
    r = ReLU()
    np.testing.assert_array_equal(r.forward(np.array([[[-1.0, 0.0, 2.0]]])), [[[0, 0, 2]]])
    np.testing.assert_array_equal(r.backward(np.ones((1, 1, 3))), [[[0, 0, 1]]])


def test_maxpool_example_and_tie():
    p = MaxPool1d(2)
    x = np.array([[[1.0, 3.0, 2.0, 2.0]]])
    np.testing.assert_array_equal(p.forward(x), [[[3, 2]]])
    np.testing.assert_array_equal(p.backward(np.ones((1, 1, 2))), [[[0, 1, 1, 0]]])


def test_maxpool_drops_remainder_and_rejects_short():
    p = MaxPool1d(2)
    assert p.forward(np.zeros((1, 1, 5))).shape == (1, 1, 2)
    assert p.backward(np.ones((1, 1, 2))).shape == (1, 1, 5)
    with pytest.raises(ShapeError):
        p.forward(np.zeros((1, 1, 1)))


def test_linear_oracle_and_gradients(rng):
    fc = Linear(6, 4, rng, np.float64)
    fc.params["b"][...] = rng.normal(size=4)
    x = rng.normal(size=(3, 6))
    W, b = fc.params["W"], fc.params["b"]
    oracle = np.array([[sum(W[o, i] * xi[i] for i in range(6)) + b[o] for o in range(4)] for xi in x])
    np.testing.assert_allclose(fc.forward(x), oracle, atol=1e-12)
    assert _layer_gradcheck(fc, x, rng) < 1e-7
    with pytest.raises(ShapeError):
        fc.forward(np.zeros((3, 5)))


# ---------------------------------------------------------------- softmax


def test_softmax_xent_examples():
    assert softmax_xent(np.zeros(2), 0)[0] == pytest.approx(np.log(2), abs=1e-15)
    assert softmax_xent(np.array([20.0, -20.0]), 0)[0] < 1e-8
    # large logits stay finite
    loss, g = softmax_xent(np.array([[1e4, -1e4]]), [1])
    assert np.isfinite(loss) and np.all(np.isfinite(g))


def test_softmax_xent_gradient(rng):
    logits = rng.normal(size=(5, 2)) * 3
    target = rng.integers(0, 2, 5)
    _, g = softmax_xent(logits, target)
    num = numeric_grad(lambda: softmax_xent(logits, target)[0], logits, h=1e-6)
    assert np.abs(g - num).max() < 1e-8


# ---------------------------------------------------------------- adam


def test_adam_first_step_formula(rng):
    p = rng.normal(size=10)
    g = rng.normal(size=10)
    start = p.copy()
    opt = Adam(lr=1e-3)
    opt.step({"p": p}, {"p": g})
    np.testing.assert_allclose(p - start, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-9)


def test_adam_zero_gradient_is_noop(rng):
    p = rng.normal(size=4)
    start = p.copy()
    opt = Adam(lr=0.1)
    for _ in range(3):
        opt.step({"p": p}, {"p": np.zeros(4)})
    np.testing.assert_array_equal(p, start)


def test_adam_shape_mismatch():
    with pytest.raises(ValueError):
        Adam().step({"p": np.zeros(3)}, {"p": np.zeros(2)})
