import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgi_vae.errors import InvalidArgument, InvalidState, NonFiniteError
from ecgi_vae.nn import (VAR_MAX, VAR_MIN, DenseHead, LSTMLayer, adam_init, adam_step,
                         dense_backward, dense_forward, grad_check, lstm_backward, lstm_forward)


def lstm_loss(layer, x, R):
    def fn(p):
        layer.set_params(W=p["W"], U=p["U"], b=p["b"])
        h, cache = lstm_forward(layer, p["x"])
        dx, g = lstm_backward(layer, cache, R)
        return float(np.sum(R * h)), {**g, "x": dx}
    return fn, {**layer.params(), "x": x}


def dense_loss(head, x, R):
    def fn(p):
        head.set_params(W=p["W"], b=p["b"])
        y, cache = dense_forward(head, p["x"])
        dx, g = dense_backward(head, cache, R)
        return float(np.sum(R * y)), {**g, "x": dx}
    return fn, {**head.params(), "x": x}


def test_zero_lstm_outputs_zero(rng):
    layer = LSTMLayer(3, 4)
    h, _ = lstm_forward(layer, rng.standard_normal((3, 6)))
    assert np.all(h == 0.0)


def test_single_step_hand_value():
    layer = LSTMLayer(1, 1)
    wi, wf, wg, wo = 0.3, -0.2, 0.8, 0.5
    layer.set_params(W=[[wi], [wf], [wg], [wo]], U=np.zeros((4, 1)), b=[0.1, 1.0, -0.1, 0.2])
    x = 0.7
    sig = lambda z: 1 / (1 + math.exp(-z))
    i = sig(wi * x + 0.1)
    g = math.tanh(wg * x - 0.1)
    o = sig(wo * x + 0.2)
    expected = o * math.tanh(i * g)
    h, _ = lstm_forward(layer, [[x]])
    assert h[0, 0] == pytest.approx(expected, abs=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 20.0))
def test_hidden_bounded(seed, scale):
    r = np.random.default_rng(seed)
    layer = LSTMLayer(2, 3, r, scale=scale)
    h, _ = lstm_forward(layer, r.standard_normal((2, 5)) * scale)
    assert np.all(np.abs(h) < 1.0)


def test_lstm_zero_upstream(rng):
    layer = LSTMLayer(2, 3, rng)
    x = rng.standard_normal((2, 4))
    _, cache = lstm_forward(layer, x)
    dx, g = lstm_backward(layer, cache, np.zeros((3, 4)))
    assert not np.any(dx) and not any(np.any(v) for v in g.values())


def test_lstm_gradcheck(rng):
    layer = LSTMLayer(2, 3, rng)
    fn, p = lstm_loss(layer, rng.standard_normal((2, 4)), rng.standard_normal((3, 4)))
    report = grad_check(fn, p, tolerance=1e-5)
    assert report.passed, report


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 5), st.integers(1, 3),
       st.integers(0, 2 ** 31))
def test_lstm_gradcheck_random_shapes(d, h, T, B, seed):
    r = np.random.default_rng(seed)
    layer = LSTMLayer(d, h, r)
    fn, p = lstm_loss(layer, r.standard_normal((B, d, T)), r.standard_normal((B, h, T)))
    assert grad_check(fn, p, tolerance=1e-5).passed


def test_lstm_gradient_linearity(rng):
    layer = LSTMLayer(2, 3, rng)
    x = rng.standard_normal((2, 4))
    _, cache = lstm_forward(layer, x)
    e1 = np.zeros((3, 4))
    e1[:, 1] = rng.standard_normal(3)
    e2 = np.zeros((3, 4))
    e2[:, 3] = rng.standard_normal(3)
    dx, g = lstm_backward(layer, cache, e1 + e2)
    dx1, g1 = lstm_backward(layer, cache, e1)
    dx2, g2 = lstm_backward(layer, cache, e2)
    np.testing.assert_allclose(dx, dx1 + dx2, atol=1e-14)
    for k in g:
        np.testing.assert_allclose(g[k], g1[k] + g2[k], atol=1e-14)


def test_lstm_stale_cache(rng):
    layer = LSTMLayer(2, 3, rng)
    _, cache = lstm_forward(layer, rng.standard_normal((2, 4)))
    layer.set_params(b=layer.b + 1)
    with pytest.raises(InvalidState):
        lstm_backward(layer, cache, np.ones((3, 4)))
    with pytest.raises(InvalidArgument):
        lstm_forward(layer, np.ones((5, 4)))


def test_dense_identity_and_exp(rng):
    head = DenseHead(3, 3)
    head.set_params(W=np.eye(3))
    x = rng.standard_normal((4, 3))
    np.testing.assert_array_equal(dense_forward(head, x)[0], x)
    var = DenseHead(3, 2, "exp")
    assert np.all(dense_forward(var, x)[0] == 1.0)
    var.set_params(b=[1e4, -1e4])
    y = dense_forward(var, x)[0]
    np.testing.assert_allclose(y[:, 0], VAR_MAX)
    np.testing.assert_allclose(y[:, 1], VAR_MIN)


@pytest.mark.parametrize("activation", ["identity", "exp"])
def test_dense_gradcheck(rng, activation):
    head = DenseHead(4, 3, activation, rng)
    fn, p = dense_loss(head, rng.standard_normal((5, 4)), rng.standard_normal((5, 3)))
    assert grad_check(fn, p, tolerance=1e-6).passed


def test_adam_zero_gradient():
    p = {"x": np.array([1.0, -2.0])}
    new, s1 = adam_step(p, {"x": np.zeros(2)}, None, lr=0.1)
    np.testing.assert_array_equal(new["x"], p["x"])
    assert not np.any(s1["m"]["x"]) and not np.any(s1["v"]["x"])
    # moments carried from earlier steps decay geometrically
    warm = adam_init(p)
    warm["m"]["x"][:] = 0.5
    warm["v"]["x"][:] = 0.25
    _, s2 = adam_step(p, {"x": np.zeros(2)}, warm, lr=0.1)
    np.testing.assert_allclose(s2["m"]["x"], 0.45)
    np.testing.assert_allclose(s2["v"]["x"], 0.25 * 0.999)


@pytest.mark.parametrize("g", [1e-3, 1.0, 1e3])
def test_adam_first_step_magnitude(g):
    p = {"x": np.zeros(1)}
    new, _ = adam_step(p, {"x": np.full(1, g)}, None, lr=0.01)
    assert abs(new["x"][0]) == pytest.approx(0.01, rel=1e-4)


def test_adam_quadratic():
    p, s = {"x": np.array([5.0])}, None
    for _ in range(100):
        p, s = adam_step(p, {"x": 2 * p["x"]}, s, lr=0.1)
    assert abs(p["x"][0]) < 0.5


def test_grad_check_linear_and_quadratic(rng):
    a = rng.standard_normal(5)
    lin = grad_check(lambda p: (float(a @ p["x"]), {"x": a}), {"x": rng.standard_normal(5)})
    assert lin.max_rel_error < 1e-9
    quad = grad_check(lambda p: (float(p["x"] @ p["x"]), {"x": 2 * p["x"]}),
                      {"x": rng.standard_normal(5)})
    assert quad.max_rel_error < 1e-8


def test_grad_check_reports_non_finite():
    with pytest.raises(NonFiniteError, match="x"):
        grad_check(lambda p: (0.0, {"x": np.array([np.nan])}), {"x": np.zeros(1)})


def test_grad_check_catches_wrong_gradient():
    rep = grad_check(lambda p: (float(p["x"] @ p["x"]), {"x": 3 * p["x"]}), {"x": np.ones(3)})
    assert not rep.passed and rep.worst[0] == "x"


def test_grad_check_detects_small_relative_error(rng):
    # a 0.1% gradient error on a large objective is still caught
    x0 = rng.standard_normal(6) * 10
    fn = lambda p: (float(100 * p["x"] @ p["x"]), {"x": 200.2 * p["x"]})
    rep = grad_check(fn, {"x": x0}, tolerance=1e-4)
    assert not rep.passed and rep.max_rel_error == pytest.approx(1e-3, rel=0.05)
