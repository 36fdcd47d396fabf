import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmrec.tensor import (
    ConvSpec,
    LstmParams,
    NonFiniteError,
    SgdConfig,
    ShapeError,
    argmax_decision,
    conv_backward,
    conv_forward,
    dense_backward,
    dense_forward,
    grad_check,
    l2_penalty,
    lstm_step,
    lstm_step_backward,
    softmax,
    softmax_cross_entropy,
    sgd_step,
    tensor_from_json,
    tensor_to_json,
)

from conftest import naive_conv

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


# -- conv ---------------------------------------------------------------------

def test_conv_1x1_identity(rng):
    x = rng.normal(size=(1, 4, 5))
    spec = ConvSpec(np.ones((1, 1, 1, 1)), [0.0])
    np.testing.assert_array_equal(conv_forward(x, spec), x)


def test_conv_3x3_ones():
    spec = ConvSpec(np.ones((1, 1, 3, 3)), [0.0])
    out = conv_forward(np.ones((1, 3, 3)), spec)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 9.0


def test_conv_zero_input_passes_bias():
    spec = ConvSpec(np.full((2, 3, 2, 2, 2), 0.7), [0.5, 0.5])
    out = conv_forward(np.zeros((3, 4, 4, 4)), spec)
    assert np.all(out == 0.5)


@pytest.mark.parametrize("rank", [1, 2, 3])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("padding", ["valid", "same"])
def test_conv_matches_naive_oracle(rng, rank, stride, padding):
    for _ in range(5):
        c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
        ks = tuple(rng.integers(1, 4, size=rank))
        sp = tuple(k + rng.integers(0, 4) for k in ks)
        x = rng.normal(size=(c_in,) + sp)
        w = rng.normal(size=(c_out, c_in) + ks)
        b = rng.normal(size=c_out)
        spec = ConvSpec(w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(
            conv_forward(x, spec), naive_conv(x, w, b, stride, padding), atol=1e-10, rtol=0)


def test_conv_same_keeps_size(rng):
    spec = ConvSpec(rng.normal(size=(2, 1, 3, 3)), [0, 0], padding="same")
    assert conv_forward(rng.normal(size=(1, 7, 6)), spec).shape == (2, 7, 6)


def test_conv_errors():
    spec = ConvSpec(np.ones((1, 1, 3, 3)), [0.0])
    with pytest.raises(ShapeError, match="spatial dim 1"):
        conv_forward(np.ones((1, 4, 2)), spec)
    with pytest.raises(ShapeError, match="channel"):
        conv_forward(np.ones((2, 4, 4)), spec)
    with pytest.raises(NonFiniteError):
        conv_forward(np.full((1, 3, 3), np.nan), spec)
    with pytest.raises(ValueError):
        ConvSpec(np.ones((1, 1, 3)), [0.0], stride=0)


@pytest.mark.parametrize("act", ["identity", "relu", "tanh", "sigmoid"])
def test_conv_backward_grad_check(rng, act):
    x = rng.normal(size=(2, 5, 4))
    w = rng.normal(size=(3, 2, 3, 2))
    b = rng.normal(size=3)
    up = rng.normal(size=conv_forward(x, ConvSpec(w, b, activation=act, stride=(2, 1))).shape)

    def loss_w(wv):
        spec = ConvSpec(wv, b, activation=act, stride=(2, 1))
        return float(np.sum(conv_forward(x, spec) * up)), conv_backward(x, spec, up)[1]

    def loss_x(xv):
        spec = ConvSpec(w, b, activation=act, stride=(2, 1))
        return float(np.sum(conv_forward(xv, spec) * up)), conv_backward(xv, spec, up)[0]

    assert grad_check(loss_w, w, 1e-6) < 1e-5
    assert grad_check(loss_x, x, 1e-6) < 1e-5


def test_conv_deterministic(rng):
    x = rng.normal(size=(2, 6, 6, 6))
    spec = ConvSpec(rng.normal(size=(3, 2, 3, 3, 3)), rng.normal(size=3), activation="relu")
    assert conv_forward(x, spec).tobytes() == conv_forward(x.copy(), spec).tobytes()


# -- softmax / argmax / l2 ----------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=1e-15)
    np.testing.assert_allclose(softmax([math.log(2), 0, 0]), [0.5, 0.25, 0.25], rtol=1e-15)
    with pytest.raises(ShapeError):
        softmax([])


@given(arrays(np.float64, st.integers(1, 12), elements=finite), st.floats(-1e4, 1e4))
def test_softmax_sums_to_one_and_shift_invariant(z, c):
    p = softmax(z)
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.all((p > 0) | (z.max() - z > 700)) and np.all(p <= 1)
    q = softmax(z + c)
    np.testing.assert_allclose(p, q, atol=1e-12)


def test_softmax_large_logits_stable():
    z = np.array([1e4, 1e4 - 1.0, -1e4])
    p = softmax(z)
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12
    assert argmax_decision(p) == 0


def test_argmax_examples():
    assert argmax_decision([0.1, 0.7, 0.2]) == 1
    assert argmax_decision([0.5, 0.5]) == 0


# distinct integer-spaced logits: exp keeps them distinguishable
@given(st.lists(st.integers(-200, 200), min_size=1, max_size=10), st.floats(0.01, 3))
def test_argmax_softmax_matches_raw(ints, scale):
    z = np.asarray(ints, dtype=float) * scale
    assert argmax_decision(softmax(z)) == argmax_decision(z)


def test_l2_examples():
    assert l2_penalty(np.zeros(5)) == 0.0
    assert l2_penalty([3.0, 4.0]) == 25.0


# squares of |w| < 1e-154 underflow to zero, so keep away from that band
representable = finite.filter(lambda v: v == 0 or abs(v) > 1e-100)


@given(arrays(np.float64, st.integers(1, 20), elements=representable), st.floats(-10, 10))
def test_l2_homogeneous_and_nonnegative(w, k):
    v = l2_penalty(w)
    assert v >= 0
    assert (v == 0) == bool(np.all(w == 0))
    assert math.isclose(l2_penalty(k * w), k * k * v, rel_tol=1e-12, abs_tol=1e-300)


def test_l2_grad_check(rng):
    w = rng.normal(size=7)
    assert grad_check(lambda p: (l2_penalty(p), 2 * p), w) < 1e-8


# -- dense --------------------------------------------------------------------

def test_dense_examples():
    x = np.array([2.0, -3.0])
    np.testing.assert_array_equal(dense_forward(np.eye(2), np.zeros(2), x), x)
    assert dense_forward([[1.0, 1.0]], [1.0], [2.0, 3.0]).tolist() == [6.0]
    assert dense_forward([[1.0]], [0.0], [-4.0], "relu").tolist() == [0.0]
    with pytest.raises(ShapeError):
        dense_forward(np.eye(3), np.zeros(3), x)


@pytest.mark.parametrize("act", ["identity", "relu", "tanh", "sigmoid"])
def test_dense_grad_check(rng, act):
    w, b, x = rng.normal(size=(4, 3)), rng.normal(size=4), rng.normal(size=(5, 3))
    up = rng.normal(size=(5, 4))

    def lw(wv):
        return float(np.sum(dense_forward(wv, b, x, act) * up)), dense_backward(wv, b, x, up, act)[1]

    def lb(bv):
        return float(np.sum(dense_forward(w, bv, x, act) * up)), dense_backward(w, bv, x, up, act)[2]

    def lx(xv):
        return float(np.sum(dense_forward(w, b, xv, act) * up)), dense_backward(w, b, xv, up, act)[0]

    for fn, p in ((lw, w), (lb, b), (lx, x)):
        assert grad_check(fn, p) < 1e-5


def test_softmax_cross_entropy_grad(rng):
    z = rng.normal(size=(4, 7))
    labels = np.array([0, 3, 6, 3])
    assert grad_check(lambda p: softmax_cross_entropy(p, labels), z) < 1e-5


# -- LSTM ---------------------------------------------------------------------

def _scalar_params():
    w_x = np.array([[0.4], [-0.2], [0.7], [1.1]])
    w_h = np.array([[0.3], [0.5], [-0.6], [0.2]])
    b = np.array([0.1, 1.0, -0.1, 0.05])
    return LstmParams(w_x, w_h, b)


def test_lstm_zero():
    h, c = lstm_step(LstmParams.zeros(3, 5), np.zeros(3), np.zeros(5), np.zeros(5))
    assert np.all(h == 0) and np.all(c == 0)


def test_lstm_scalar_oracle():
    # frozen from a straight-line math-module evaluation of the gate formulas
    h, c = lstm_step(_scalar_params(), [0.5], [-0.3], [0.2])
    assert h[0] == pytest.approx(0.23439591308792324, rel=1e-14)
    assert c[0] == pytest.approx(0.40811689315482413, rel=1e-14)


def test_lstm_shapes_and_errors(rng):
    p = LstmParams.init(3, 5, rng)
    h, c = lstm_step(p, np.ones(3), np.zeros(5), np.zeros(5))
    assert h.shape == (5,) and c.shape == (5,)
    np.testing.assert_array_equal(p.gate("f")[2], np.ones(5))
    with pytest.raises(ShapeError):
        lstm_step(p, np.ones(4), np.zeros(5), np.zeros(5))
    with pytest.raises(ShapeError):
        LstmParams(np.zeros((8, 3)), np.zeros((8, 3)), np.zeros(8))


def test_lstm_step_grad_check(rng):
    p = LstmParams.init(3, 4, rng)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
    uh, uc = rng.normal(size=4), rng.normal(size=4)

    def loss(h, c):
        return float(h @ uh + c @ uc)

    def lx(xv):
        h, c = lstm_step(p, xv, h0, c0)
        return loss(h, c), lstm_step_backward(p, xv, h0, c0, uh, uc)[0]

    def lh(hv):
        h, c = lstm_step(p, x, hv, c0)
        return loss(h, c), lstm_step_backward(p, x, hv, c0, uh, uc)[1]

    def lc(cv):
        h, c = lstm_step(p, x, h0, cv)
        return loss(h, c), lstm_step_backward(p, x, h0, cv, uh, uc)[2]

    def lwx(wv):
        q = LstmParams(wv, p.w_h, p.b)
        h, c = lstm_step(q, x, h0, c0)
        return loss(h, c), lstm_step_backward(q, x, h0, c0, uh, uc)[3]["w_x"]

    def lwh(wv):
        q = LstmParams(p.w_x, wv, p.b)
        h, c = lstm_step(q, x, h0, c0)
        return loss(h, c), lstm_step_backward(q, x, h0, c0, uh, uc)[3]["w_h"]

    for fn, v in ((lx, x), (lh, h0), (lc, c0), (lwx, p.w_x), (lwh, p.w_h)):
        assert grad_check(fn, v) < 1e-5


# -- sgd / grad_check / serialization -----------------------------------------

def test_sgd_examples():
    cfg = SgdConfig(learning_rate=0.1, l2_lambda=0.0)
    p = [np.array([1.0, -2.0])]
    assert sgd_step(p, [np.zeros(2)], cfg)[0].tolist() == [1.0, -2.0]
    out = sgd_step({"w": np.array([1.0])}, {"w": np.array([0.0])}, SgdConfig(0.1, 0.5))
    assert out["w"][0] == pytest.approx(0.9, abs=1e-15)
    with pytest.raises(ShapeError):
        sgd_step([np.ones(2)], [np.ones(3)], cfg)
    with pytest.raises(ValueError):
        SgdConfig(learning_rate=0.0)


def test_sgd_deterministic(rng):
    p, g = [rng.normal(size=(3, 3))], [rng.normal(size=(3, 3))]
    cfg = SgdConfig(0.05, 0.01, seed=7)
    assert sgd_step(p, g, cfg)[0].tobytes() == sgd_step(p, g, cfg)[0].tobytes()


def test_grad_check_quadratic(rng):
    p = rng.normal(size=10)
    assert grad_check(lambda v: (float(v @ v), 2 * v), p, 1e-6) < 1e-8


def test_grad_check_detects_wrong_gradient(rng):
    p = rng.normal(size=4)
    assert grad_check(lambda v: (float(v @ v), 3 * v), p) > 0.1


def test_grad_check_errors():
    with pytest.raises(ValueError):
        grad_check(lambda v: (0.0, v), np.ones(2), 1e-2)
    with pytest.raises(NonFiniteError):
        grad_check(lambda v: (float("nan"), v), np.ones(2))


def test_tensor_json_roundtrip(rng):
    x = rng.normal(size=(2, 3, 4))
    obj = tensor_to_json(x)
    assert obj["shape"] == [2, 3, 4] and len(obj["data"]) == 24
    np.testing.assert_array_equal(tensor_from_json(obj), x)
    with pytest.raises(ShapeError):
        tensor_from_json({"shape": [2, 2], "data": [1.0]})
