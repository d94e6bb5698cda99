"""Small numpy neural-network engine: layers, exact backward, RMSProp, clipping.

Tensors are plain numpy arrays laid out N x C x H x W (or N x F for dense
activations). Parameters are stored as float32; every forward/backward pass
computes in float64 and only the optimizer writes back to float32 storage.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import IncompatibleSpec, NonpositiveClip, ShapeMismatch, TraceMismatch
from .rng import LaneRng

CONV = "Conv"
TCONV = "TransposedConv"
DENSE = "Dense"
LEAKY = "LeakyReLU"
TANH = "Tanh"

KINDS = (CONV, TCONV, DENSE, LEAKY, TANH)
GENERATOR = "Generator"
CRITIC = "Critic"

INIT_LANES = 64
COMPUTE = np.float64
STORAGE = np.float32


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    slope: float = 0.2

    def __post_init__(self):
        # slopes are stored as float32 so specs survive serialization unchanged
        object.__setattr__(self, "slope", float(np.float32(self.slope)))
        if self.kind not in KINDS:
            raise IncompatibleSpec(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise IncompatibleSpec(f"bad extents in {self}")
        if self.kind == LEAKY and not 0.0 < self.slope < 1.0:
            raise IncompatibleSpec("LeakyReLU slope must lie in (0, 1)")
        if self.kind in (CONV, TCONV, DENSE) and (self.in_ch < 1 or self.out_ch < 1):
            raise IncompatibleSpec(f"{self.kind} needs positive in/out extents")

    @property
    def has_params(self) -> bool:
        return self.kind in (CONV, TCONV, DENSE)

    def param_shapes(self) -> list[tuple[int, ...]]:
        k = self.kernel
        if self.kind == CONV:
            return [(self.out_ch, self.in_ch, k, k), (self.out_ch,)]
        if self.kind == TCONV:
            return [(self.in_ch, self.out_ch, k, k), (self.out_ch,)]
        if self.kind == DENSE:
            return [(self.out_ch, self.in_ch), (self.out_ch,)]
        return []

    def fans(self) -> tuple[int, int]:
        if self.kind == DENSE:
            return self.in_ch, self.out_ch
        k2 = self.kernel * self.kernel
        return self.in_ch * k2, self.out_ch * k2

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Per-sample output shape, or IncompatibleSpec."""
        if self.kind in (LEAKY, TANH):
            return in_shape
        if self.kind == DENSE:
            if math.prod(in_shape) != self.in_ch:
                raise IncompatibleSpec(
                    f"Dense expects {self.in_ch} inputs, got shape {in_shape}"
                )
            return (self.out_ch,)
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise IncompatibleSpec(f"{self.kind} expects {self.in_ch} channels, got {in_shape}")
        _, h, w = in_shape
        k, s, p = self.kernel, self.stride, self.padding
        if self.kind == CONV:
            ho = (h + 2 * p - k) // s + 1
            wo = (w + 2 * p - k) // s + 1
        else:
            ho = (h - 1) * s - 2 * p + k
            wo = (w - 1) * s - 2 * p + k
        if ho < 1 or wo < 1:
            raise IncompatibleSpec(f"{self.kind} collapses {in_shape} to nothing")
        return (self.out_ch, ho, wo)

    # Serialized form: integer extents, slope carried as its float32 bit pattern.
    def extents(self) -> list[int]:
        if self.kind in (CONV, TCONV):
            return [self.in_ch, self.out_ch, self.kernel, self.stride, self.padding]
        if self.kind == DENSE:
            return [self.in_ch, self.out_ch]
        if self.kind == LEAKY:
            return [struct.unpack("<I", struct.pack("<f", self.slope))[0]]
        return []

    @classmethod
    def from_extents(cls, kind: str, ext: Sequence[int]) -> "LayerSpec":
        if kind in (CONV, TCONV):
            i, o, k, s, p = ext
            return cls(kind, in_ch=i, out_ch=o, kernel=k, stride=s, padding=p)
        if kind == DENSE:
            i, o = ext
            return cls(kind, in_ch=i, out_ch=o)
        if kind == LEAKY:
            (bits,) = ext
            return cls(kind, slope=struct.unpack("<f", struct.pack("<I", bits))[0])
        if ext:
            raise IncompatibleSpec(f"{kind} takes no extents")
        return cls(kind)


def conv(i: int, o: int, k: int = 3, s: int = 1, p: int = 1) -> LayerSpec:
    return LayerSpec(CONV, in_ch=i, out_ch=o, kernel=k, stride=s, padding=p)


def tconv(i: int, o: int, k: int = 4, s: int = 2, p: int = 1) -> LayerSpec:
    return LayerSpec(TCONV, in_ch=i, out_ch=o, kernel=k, stride=s, padding=p)


def dense(i: int, o: int) -> LayerSpec:
    return LayerSpec(DENSE, in_ch=i, out_ch=o)


def leaky(slope: float = 0.2) -> LayerSpec:
    return LayerSpec(LEAKY, slope=slope)


def tanh() -> LayerSpec:
    return LayerSpec(TANH)


def generator_spec(channels: int = 1, widths: Sequence[int] = (16, 32, 16)) -> list[LayerSpec]:
    """Size-preserving image-to-image generator ending in Tanh."""
    layers: list[LayerSpec] = []
    c = channels
    for w in widths:
        layers += [conv(c, w, 3, 1, 1), leaky(0.2)]
        c = w
    layers += [conv(c, channels, 3, 1, 1), tanh()]
    return layers


def mlp_generator_spec(height: int, width: int, hidden: int = 64) -> list[LayerSpec]:
    """Flattened image -> hidden -> flattened image, ending in Tanh."""
    n = height * width
    return [dense(n, hidden), leaky(0.2), dense(hidden, n), tanh()]


def critic_spec(height: int, width: int, channels: int = 1,
                widths: Sequence[int] = (16, 32)) -> list[LayerSpec]:
    """Two stride-2 convolutions, then a scalar dense head."""
    layers: list[LayerSpec] = []
    c, h, w = channels, height, width
    for wd in widths:
        layers += [conv(c, wd, 4, 2, 1), leaky(0.2)]
        c, h, w = wd, (h + 2 - 4) // 2 + 1, (w + 2 - 4) // 2 + 1
    layers.append(dense(c * h * w, 1))
    return layers


def mlp_critic_spec(height: int, width: int, hidden: int = 64, channels: int = 1) -> list[LayerSpec]:
    """Flattened image -> hidden -> scalar score."""
    return [dense(channels * height * width, hidden), leaky(0.2), dense(hidden, 1)]


class Network:
    """Ordered layers plus float32 parameters (weight, bias per parameterized layer)."""

    def __init__(self, layers: Sequence[LayerSpec], input_shape: Sequence[int],
                 params: list[np.ndarray] | None = None, role: str | None = None):
        self.layers = list(layers)
        self.input_shape = tuple(int(v) for v in input_shape)
        if not self.layers:
            raise IncompatibleSpec("network needs at least one layer")
        shape = self.input_shape
        self.shapes = [shape]
        for spec in self.layers:
            shape = spec.out_shape(shape)
            self.shapes.append(shape)
        if role == GENERATOR and self.layers[-1].kind != TANH:
            raise IncompatibleSpec("generator must end in Tanh")
        if role == CRITIC and (self.layers[-1].kind != DENSE or self.layers[-1].out_ch != 1):
            raise IncompatibleSpec("critic must end in a scalar Dense layer")
        self.role = role
        expected = [s for spec in self.layers for s in spec.param_shapes()]
        if params is None:
            params = [np.zeros(s, dtype=STORAGE) for s in expected]
        if [tuple(p.shape) for p in params] != expected:
            raise IncompatibleSpec("parameter shapes do not match layer spec")
        self.params = params

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1]

    def param_slices(self) -> list[tuple[int, int]]:
        """(start, stop) indices into ``params`` for each layer."""
        out, i = [], 0
        for spec in self.layers:
            n = len(spec.param_shapes())
            out.append((i, i + n))
            i += n
        return out

    def copy(self) -> "Network":
        return Network(self.layers, self.input_shape, [p.copy() for p in self.params], self.role)

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def init_network(layers: Sequence[LayerSpec], seed: int, input_shape: Sequence[int],
                 role: str | None = None) -> Network:
    """Glorot-uniform weights from one seeded xoshiro256** stream, zero biases.

    Weights are drawn layer by layer in row-major order from a 64-lane
    :class:`~coverless.rng.LaneRng`.
    """
    net = Network(layers, input_shape, role=role)
    rng = LaneRng(seed, lanes=INIT_LANES)
    params = []
    for spec in net.layers:
        if not spec.has_params:
            continue
        wshape, bshape = spec.param_shapes()
        fan_in, fan_out = spec.fans()
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniform(math.prod(wshape))
        params.append(((2.0 * u - 1.0) * bound).astype(STORAGE).reshape(wshape))
        params.append(np.zeros(bshape, dtype=STORAGE))
    net.params = params
    return net


# -- layer kernels -------------------------------------------------------------
# Convolutions run on channels-last (N, H, W, C) activations internally;
# forward/backward convert at the network boundary.

def _im2col(xt, k, stride, ho, wo):
    """(N*Ho*Wo, k*k*C) patch matrix of a padded NHWC batch, (i, j, c) column order."""
    n, c = xt.shape[0], xt.shape[3]
    cols = np.empty((n, ho, wo, k, k, c), dtype=xt.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xt[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(n * ho * wo, k * k * c)


def _col2im(dcols, padded_shape, k, stride, ho, wo):
    """Adjoint of :func:`_im2col`: scatter-add patch gradients back onto the padded grid."""
    n, _, _, c = padded_shape
    d6 = dcols.reshape(n, ho, wo, k, k, c)
    out = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += d6[:, :, :, i, j, :]
    return out


def _pad_hw(x, pad):
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x


def _unpad_hw(x, pad):
    return x[:, pad:x.shape[1] - pad, pad:x.shape[2] - pad, :] if pad else x


def _conv_forward(x, w, b, stride, pad):
    o, c, k, _ = w.shape
    n, h, wd, _ = x.shape
    ho, wo = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    xp = _pad_hw(x, pad)
    cols = _im2col(xp, k, stride, ho, wo)
    wm = w.transpose(0, 2, 3, 1).reshape(o, -1)  # (O, k*k*C)
    y = cols @ wm.T + b
    return y.reshape(n, ho, wo, o), (xp.shape, cols)


def _conv_backward(gy, w, cache, stride, pad, need_dx=True):
    padded_shape, cols = cache
    o, c, k, _ = w.shape
    n, ho, wo, _ = gy.shape
    g2 = gy.reshape(-1, o)
    dw = (g2.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2)
    db = g2.sum(axis=0)
    dx = None
    if need_dx:
        wm = w.transpose(0, 2, 3, 1).reshape(o, -1)
        dx = _unpad_hw(_col2im(g2 @ wm, padded_shape, k, stride, ho, wo), pad)
    return dw, db, dx


def _tconv_forward(x, w, b, stride, pad):
    c, o, k, _ = w.shape
    n, h, wd, _ = x.shape
    hf, wf = (h - 1) * stride + k, (wd - 1) * stride + k
    wm = w.transpose(0, 2, 3, 1).reshape(c, -1)  # (C, k*k*O)
    contrib = x.reshape(-1, c) @ wm
    full = _col2im(contrib, (n, hf, wf, o), k, stride, h, wd)
    y = _unpad_hw(full, pad) + b
    return np.ascontiguousarray(y), (x, (n, hf, wf, o))


def _tconv_backward(gy, w, cache, stride, pad, need_dx=True):
    x, full_shape = cache
    c, o, k, _ = w.shape
    n, h, wd, _ = x.shape
    cols = _im2col(_pad_hw(gy, pad), k, stride, h, wd)  # (N*H*W, k*k*O)
    dw = (x.reshape(-1, c).T @ cols).reshape(c, k, k, o).transpose(0, 3, 1, 2)
    db = gy.reshape(-1, o).sum(axis=0)
    dx = None
    if need_dx:
        wm = w.transpose(0, 2, 3, 1).reshape(c, -1)
        dx = (cols @ wm.T).reshape(n, h, wd, c)
    return dw, db, dx


def _to_internal(x):
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1)) if x.ndim == 4 else x


def _to_public(x):
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2)) if x.ndim == 4 else x


class Trace:
    """Activation record of one forward pass."""

    def __init__(self, net: Network, input_shape):
        self.net_id = id(net)
        self.layers = net.layers
        self.input_shape = input_shape
        self.caches: list = []


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, Trace]:
    """Run ``x`` (N x per-sample shape) through ``net``; returns (output, trace)."""
    x = np.asarray(x)
    if x.ndim == len(net.input_shape):
        raise ShapeMismatch(f"input needs a batch axis; got {x.shape}")
    if tuple(x.shape[1:]) != net.input_shape:
        raise ShapeMismatch(f"network expects {net.input_shape}, got {x.shape[1:]}")
    a = _to_internal(x.astype(COMPUTE, copy=False))
    trace = Trace(net, x.shape)
    for spec, (lo, hi) in zip(net.layers, net.param_slices()):
        p = [q.astype(COMPUTE, copy=False) for q in net.params[lo:hi]]
        if spec.kind == CONV:
            a, cache = _conv_forward(a, p[0], p[1], spec.stride, spec.padding)
        elif spec.kind == TCONV:
            a, cache = _tconv_forward(a, p[0], p[1], spec.stride, spec.padding)
        elif spec.kind == DENSE:
            # Flatten in (C, H, W) order regardless of the internal layout.
            flat = _to_public(a).reshape(a.shape[0], -1)
            cache = (flat, a.shape)
            a = flat @ p[0].T + p[1]
        elif spec.kind == LEAKY:
            cache = a > 0
            a = np.where(cache, a, spec.slope * a)
        else:
            a = np.tanh(a)
            cache = a
        trace.caches.append(cache)
    return _to_public(a), trace


def backward(net: Network, trace: Trace, output_grad: np.ndarray,
             need_input_grad: bool = False):
    """Exact gradients of ``sum(output * output_grad)`` for every parameter.

    Returns ``(param_grads, input_grad)``; ``input_grad`` is None unless
    requested. Gradients are float64 and shaped like ``net.params``.
    """
    if trace.net_id != id(net) or trace.layers != net.layers:
        raise TraceMismatch("trace was produced by a different network")
    g = np.asarray(output_grad, dtype=COMPUTE)
    expect = (trace.input_shape[0],) + net.output_shape
    if g.shape != expect:
        raise ShapeMismatch(f"output grad shape {g.shape}, expected {expect}")
    g = _to_internal(g)
    grads: list[np.ndarray | None] = [None] * len(net.params)
    slices = net.param_slices()
    for idx in range(len(net.layers) - 1, -1, -1):
        spec, cache = net.layers[idx], trace.caches[idx]
        lo, hi = slices[idx]
        need_dx = idx > 0 or need_input_grad
        if spec.kind == CONV:
            w = net.params[lo].astype(COMPUTE, copy=False)
            dw, db, g = _conv_backward(g, w, cache, spec.stride, spec.padding, need_dx)
            grads[lo], grads[lo + 1] = dw, db
        elif spec.kind == TCONV:
            w = net.params[lo].astype(COMPUTE, copy=False)
            dw, db, g = _tconv_backward(g, w, cache, spec.stride, spec.padding, need_dx)
            grads[lo], grads[lo + 1] = dw, db
        elif spec.kind == DENSE:
            flat, in_shape = cache
            w = net.params[lo].astype(COMPUTE, copy=False)
            grads[lo] = g.T @ flat
            grads[lo + 1] = g.sum(axis=0)
            if need_dx:
                gp = g @ w
                if len(in_shape) == 4:
                    n, h, wd, c = in_shape
                    g = gp.reshape(n, c, h, wd).transpose(0, 2, 3, 1)
                else:
                    g = gp.reshape(in_shape)
            else:
                g = None
        elif spec.kind == LEAKY:
            g = np.where(cache, g, spec.slope * g)
        else:
            g = g * (1.0 - cache * cache)
        if g is None:
            break
    grads = [np.ascontiguousarray(gr) for gr in grads]
    return grads, (_to_public(g) if need_input_grad else None)


# -- optimisation ---------------------------------------------------------------

ASCENT = "ascent"
DESCENT = "descent"


@dataclass
class OptimizerState:
    learning_rate: float
    decay: float = 0.99
    epsilon: float = 1e-8
    accumulators: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_network(cls, net: Network, learning_rate: float, decay: float = 0.99,
                    epsilon: float = 1e-8) -> "OptimizerState":
        acc = [np.zeros(p.shape, dtype=COMPUTE) for p in net.params]
        return cls(learning_rate, decay, epsilon, acc)


def rmsprop_step(net: Network, grads: Sequence[np.ndarray], opt: OptimizerState,
                 direction: str = DESCENT) -> None:
    """acc <- decay*acc + (1-decay)*g^2; theta <-/+ lr*g/(sqrt(acc)+eps)."""
    if direction not in (ASCENT, DESCENT):
        raise ValueError(f"direction must be {ASCENT!r} or {DESCENT!r}")
    if len(grads) != len(net.params) or len(opt.accumulators) != len(net.params):
        raise ShapeMismatch("gradient/accumulator count does not match parameters")
    signed_lr = opt.learning_rate if direction == ASCENT else -opt.learning_rate
    for i, (p, g, acc) in enumerate(zip(net.params, grads, opt.accumulators)):
        if g.shape != p.shape or acc.shape != p.shape:
            raise ShapeMismatch(f"parameter {i}: {p.shape} vs grad {g.shape}")
        acc *= opt.decay
        acc += (1.0 - opt.decay) * np.square(g)
        denom = np.sqrt(acc)
        denom += opt.epsilon
        step = np.divide(g, denom, out=denom)
        step *= signed_lr
        step += p
        net.params[i] = step.astype(p.dtype)


def clip_weights(net: Network, c: float) -> None:
    """Clamp every parameter into [-c, c] in place."""
    if not c > 0:
        raise NonpositiveClip(f"clip constant must be positive, got {c}")
    for p in net.params:
        np.clip(p, -c, c, out=p)
