"""Central finite-difference oracle for network gradients."""

import numpy as np

from coverless import nn

H = 1e-3


def _loss(net, x, weights):
    out, _ = nn.forward(net, x)
    return float(np.sum(out * weights))


def numeric_grads(net, x, weights):
    """d(sum(out * weights)) / d(param) and d/d(input), one coordinate at a time."""
    grads = []
    for p in net.params:
        g = np.zeros(p.shape)
        flat, gf = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + H
            up = _loss(net, x, weights)
            flat[i] = orig - H
            down = _loss(net, x, weights)
            flat[i] = orig
            gf[i] = (up - down) / (2 * H)
        grads.append(g)
    gx = np.zeros(x.shape)
    xf, gxf = x.reshape(-1), gx.reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + H
        up = _loss(net, x, weights)
        xf[i] = orig - H
        down = _loss(net, x, weights)
        xf[i] = orig
        gxf[i] = (up - down) / (2 * H)
    return grads, gx


def rel_err(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check(net, x, rng):
    """Largest relative error over every parameter tensor and the input gradient.

    Parameters are promoted to float64 for the check so the perturbation is
    exact; the engine computes in float64 regardless of storage.
    """
    net = nn.Network(net.layers, net.input_shape, [p.astype(np.float64) for p in net.params])
    x = np.array(x, dtype=np.float64)
    out, trace = nn.forward(net, x)
    weights = rng.standard_normal(out.shape)
    grads, gx = nn.backward(net, trace, weights, need_input_grad=True)
    ngrads, ngx = numeric_grads(net, x, weights)
    errs = [rel_err(a, n) for a, n in zip(grads, ngrads)] + [rel_err(gx, ngx)]
    return max(errs)


def random_instance(rng, kind):
    """A random small network exercising ``kind`` (or a 3-layer composition)."""
    n = int(rng.integers(1, 3))
    if kind == nn.DENSE:
        i, o = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        layers, shape = [nn.dense(i, o)], (i,)
    elif kind in (nn.LEAKY, nn.TANH):
        shape = (int(rng.integers(1, 3)), int(rng.integers(2, 5)), int(rng.integers(2, 5)))
        layers = [nn.leaky(float(rng.uniform(0.05, 0.5)))] if kind == nn.LEAKY else [nn.tanh()]
    elif kind == nn.CONV:
        c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        k, s, p = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
        hw = int(rng.integers(max(k, 3), 7))
        layers, shape = [nn.conv(c, o, k, s, p)], (c, hw, hw + 1)
    elif kind == nn.TCONV:
        c, o = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        k, s = int(rng.integers(2, 5)), int(rng.integers(1, 3))
        p = int(rng.integers(0, k // 2 + 1))
        hw = int(rng.integers(2, 5))
        layers, shape = [nn.tconv(c, o, k, s, p)], (c, hw, hw)
    else:  # composed 3-layer nets
        c = int(rng.integers(1, 3))
        hw = int(rng.integers(4, 7))
        pick = int(rng.integers(0, 3))
        if pick == 0:
            layers = [nn.conv(c, 2, 3, 1, 1), nn.leaky(0.2), nn.dense(2 * hw * hw, 3)]
        elif pick == 1:
            layers = [nn.conv(c, 2, 3, 2, 1), nn.tanh(), nn.tconv(2, 1, 4, 2, 1)]
        else:
            layers = [nn.dense(c * hw * hw, 5), nn.leaky(0.1), nn.dense(5, 2)]
        shape = (c, hw, hw)
    net = nn.init_network(layers, int(rng.integers(0, 2 ** 32)), shape)
    # nonzero biases so bias gradients are exercised away from the init point
    for i, p in enumerate(net.params):
        if p.ndim == 1:
            net.params[i] = rng.uniform(-0.5, 0.5, p.shape).astype(np.float32)
    x = rng.uniform(-1, 1, (n,) + shape)
    return net, x


COMPOSED = "composed"
ALL_KINDS = (nn.CONV, nn.TCONV, nn.DENSE, nn.LEAKY, nn.TANH, COMPOSED)
