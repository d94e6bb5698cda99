import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coverless import nn
from coverless.errors import IncompatibleSpec, NonpositiveClip, ShapeMismatch, TraceMismatch

import gradcheck


def _net(layers, shape, params):
    return nn.Network(layers, shape, [np.asarray(p, dtype=np.float32) for p in params])


def _brute_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for a in range(n):
        for f in range(o):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[a, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[a, f, i, j] = np.sum(patch * w[f]) + b[f]
    return out


def _brute_tconv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    _, o, k, _ = w.shape
    full = np.zeros((n, o, (h - 1) * stride + k, (wd - 1) * stride + k))
    for a in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(wd):
                    full[a, :, i * stride:i * stride + k, j * stride:j * stride + k] += x[a, ch, i, j] * w[ch]
    ho, wo = full.shape[2] - 2 * pad, full.shape[3] - 2 * pad
    return full[:, :, pad:pad + ho, pad:pad + wo] + b[None, :, None, None]


def test_init_deterministic_and_shapes():
    layers = [nn.dense(4, 2)]
    a = nn.init_network(layers, 42, (4,))
    b = nn.init_network(layers, 42, (4,))
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))
    assert a.params[0].shape == (2, 4) and a.params[1].shape == (2,)
    assert not np.any(a.params[1])
    assert a.params[0].dtype == np.float32
    bound = np.sqrt(6 / 6)
    assert np.all(np.abs(a.params[0]) <= bound)
    c = nn.init_network(layers, 43, (4,))
    assert not np.array_equal(a.params[0], c.params[0])


def test_identity_dense():
    net = _net([nn.dense(3, 3)], (3,), [np.eye(3), np.zeros(3)])
    x = np.array([[1.0, -2.0, 0.5]])
    out, _ = nn.forward(net, x)
    assert np.array_equal(out, x)


def test_tanh_zero():
    net = nn.Network([nn.tanh()], (1, 2, 2))
    out, _ = nn.forward(net, np.zeros((1, 1, 2, 2)))
    assert np.array_equal(out, np.zeros((1, 1, 2, 2)))


def test_ones_kernel_hand_sum():
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    net = _net([nn.conv(1, 1, 3, 1, 1)], (1, 4, 4), [np.ones((1, 1, 3, 3)), np.zeros(1)])
    out, _ = nn.forward(net, x)
    # corner = 0+1+4+5, centre (1,1) = sum of rows 0..2, cols 0..2
    assert out[0, 0, 0, 0] == 10
    assert out[0, 0, 1, 1] == 0 + 1 + 2 + 4 + 5 + 6 + 8 + 9 + 10
    assert np.array_equal(out, _brute_conv(x, np.ones((1, 1, 3, 3)), np.zeros(1), 1, 1))


@pytest.mark.parametrize("k,s,p", [(3, 1, 1), (4, 2, 1), (1, 1, 0), (3, 2, 0), (2, 3, 1)])
def test_conv_matches_loops(rng, k, s, p):
    w, b = rng.standard_normal((3, 2, k, k)), rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 7, 6))
    net = nn.Network([nn.conv(2, 3, k, s, p)], (2, 7, 6), [w, b])
    out, _ = nn.forward(net, x)
    assert np.allclose(out, _brute_conv(x, w, b, s, p), atol=1e-12)


@pytest.mark.parametrize("k,s,p", [(4, 2, 1), (3, 1, 1), (2, 2, 0), (3, 3, 1)])
def test_tconv_matches_loops(rng, k, s, p):
    w, b = rng.standard_normal((2, 3, k, k)), rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 4, 5))
    net = nn.Network([nn.tconv(2, 3, k, s, p)], (2, 4, 5), [w, b])
    out, _ = nn.forward(net, x)
    assert np.allclose(out, _brute_tconv(x, w, b, s, p), atol=1e-12)


def test_dense_flattens_chw():
    x = np.arange(8, dtype=float).reshape(1, 2, 2, 2)
    w = np.zeros((1, 8))
    w[0, 5] = 1.0  # channel 1, row 0, col 1
    net = _net([nn.dense(8, 1)], (2, 2, 2), [w, np.zeros(1)])
    out, _ = nn.forward(net, x)
    assert out[0, 0] == x[0, 1, 0, 1]


def test_backward_zero_grad(rng):
    net, x = gradcheck.random_instance(rng, gradcheck.COMPOSED)
    out, trace = nn.forward(net, x)
    grads, _ = nn.backward(net, trace, np.zeros_like(out))
    assert all(not np.any(g) for g in grads)


def test_backward_scalar_dense():
    net = _net([nn.dense(1, 1)], (1,), [[[0.7]], [0.0]])
    out, trace = nn.forward(net, np.array([[2.0]]))
    grads, _ = nn.backward(net, trace, np.ones_like(out))
    assert grads[0][0, 0] == 2.0 and grads[1][0] == 1.0


@pytest.mark.parametrize("kind", gradcheck.ALL_KINDS)
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(hash(kind) % 2 ** 32)
    for _ in range(4):
        net, x = gradcheck.random_instance(rng, kind)
        assert gradcheck.check(net, x, rng) < 1e-3


def test_backward_rejects_foreign_trace(rng):
    a = nn.init_network([nn.dense(3, 2)], 1, (3,))
    b = nn.init_network([nn.dense(3, 2)], 2, (3,))
    out, trace = nn.forward(a, rng.standard_normal((1, 3)))
    with pytest.raises(TraceMismatch):
        nn.backward(b, trace, np.ones_like(out))
    with pytest.raises(ShapeMismatch):
        nn.backward(a, trace, np.ones((2, 2)))


def test_forward_rejects_bad_input():
    net = nn.init_network([nn.dense(3, 2)], 1, (3,))
    with pytest.raises(ShapeMismatch):
        nn.forward(net, np.zeros((1, 4)))


def test_incompatible_specs():
    with pytest.raises(IncompatibleSpec):
        nn.Network([nn.dense(3, 2), nn.dense(3, 1)], (3,))
    with pytest.raises(IncompatibleSpec):
        nn.leaky(1.5)
    with pytest.raises(IncompatibleSpec):
        nn.Network([nn.dense(4, 4)], (4,), role=nn.GENERATOR)
    with pytest.raises(IncompatibleSpec):
        nn.Network([nn.dense(4, 2)], (4,), role=nn.CRITIC)
    with pytest.raises(IncompatibleSpec):
        nn.LayerSpec(nn.CONV, 1, 1, kernel=0)


def test_default_architectures_shapes():
    g = nn.Network(nn.generator_spec(1), (1, 64, 64), role=nn.GENERATOR)
    assert g.output_shape == (1, 64, 64)
    d = nn.Network(nn.critic_spec(64, 64), (1, 64, 64), role=nn.CRITIC)
    assert d.shapes[2] == (16, 32, 32) and d.shapes[4] == (32, 16, 16) and d.output_shape == (1,)
    m = nn.Network(nn.mlp_generator_spec(16, 16), (1, 16, 16), role=nn.GENERATOR)
    assert m.output_shape == (256,)


def _scalar_opt(decay=0.9, lr=0.1):
    net = _net([nn.dense(1, 1)], (1,), [[[1.0]], [0.0]])
    opt = nn.OptimizerState.for_network(net, lr, decay, 1e-8)
    return net, opt


def test_rmsprop_descent_and_ascent():
    grads = [np.array([[1.0]]), np.array([0.0])]
    net, opt = _scalar_opt()
    nn.rmsprop_step(net, grads, opt, nn.DESCENT)
    expected = 1 - 0.1 / (np.sqrt(0.1) + 1e-8)
    assert opt.accumulators[0][0, 0] == pytest.approx(0.1)
    assert net.params[0][0, 0] == pytest.approx(expected, abs=1e-6)
    assert net.params[0][0, 0] == pytest.approx(0.68377, abs=1e-5)
    net, opt = _scalar_opt()
    nn.rmsprop_step(net, grads, opt, nn.ASCENT)
    assert net.params[0][0, 0] == pytest.approx(1.31623, abs=1e-5)
    assert net.params[0][0, 0] - 1 == pytest.approx(1 - expected, abs=1e-6)


def test_rmsprop_zero_lr(rng):
    net = nn.init_network([nn.dense(3, 2)], 0, (3,))
    before = [p.copy() for p in net.params]
    opt = nn.OptimizerState.for_network(net, 0.0)
    nn.rmsprop_step(net, [rng.standard_normal(p.shape) for p in net.params], opt)
    assert all(np.array_equal(a, b) for a, b in zip(before, net.params))
    assert all(np.all(a >= 0) for a in opt.accumulators)


def test_clip_examples():
    net = _net([nn.dense(3, 1)], (3,), [[[-5, 0.005, 5]], [0.0]])
    nn.clip_weights(net, 0.01)
    assert net.params[0].tolist() == [[np.float32(-0.01), np.float32(0.005), np.float32(0.01)]]
    once = [p.copy() for p in net.params]
    nn.clip_weights(net, 0.01)
    assert all(np.array_equal(a, b) for a, b in zip(once, net.params))
    with pytest.raises(NonpositiveClip):
        nn.clip_weights(net, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(1e-4, 2.0))
def test_clip_idempotent_and_bounded(seed, c):
    net = nn.init_network([nn.conv(1, 2, 3), nn.leaky(), nn.dense(2 * 25, 1)], seed, (1, 5, 5))
    for p in net.params:
        p *= 100
    nn.clip_weights(net, c)
    once = [p.copy() for p in net.params]
    nn.clip_weights(net, c)
    bound = np.float32(c)
    assert all(np.array_equal(a, b) for a, b in zip(once, net.params))
    assert all(np.all(np.abs(p) <= bound) for p in net.params)


def test_forward_backward_deterministic(rng):
    net, x = gradcheck.random_instance(rng, gradcheck.COMPOSED)
    o1, t1 = nn.forward(net, x)
    o2, t2 = nn.forward(net, x)
    g1, _ = nn.backward(net, t1, np.ones_like(o1))
    g2, _ = nn.backward(net, t2, np.ones_like(o2))
    assert np.array_equal(o1, o2)
    assert all(np.array_equal(a, b) for a, b in zip(g1, g2))
