"""Minimal reverse-mode differentiation over the package's forward primitives.

A composite function is written against an ``ops`` namespace::

    def loss(ops, x, w):
        return ops.sum(ops.softmax(ops.matmul(x, w)))

``loss(array_ops, x, w)`` evaluates it directly; ``record_forward(loss, x, w)``
evaluates it while recording a :class:`Tape`. Both dispatch to the same
forward functions, so recording never changes the numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import attention as _attn
from . import nn as _nn


class UnsupportedOpError(NotImplementedError):
    pass


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swap(x):
    return np.swapaxes(x, -1, -2)


# --------------------------------------------------------------------------
# Primitive table: name -> (forward, vjp). A vjp receives the output
# cotangent, the forward output, the array inputs and the keyword options,
# and returns one gradient per array input.


def _fwd_depthwise(z, weight, bias, ceil_mode=False):
    return _nn.depthwise_compress(z, _nn.DepthwiseKernel2D(weight, bias), ceil_mode)


def _vjp_depthwise(g, out, z, weight, bias, ceil_mode=False):
    k = weight.shape[0]
    zp = _nn._edge_pad_hw(z, k)
    B, T, Hp, Wp, D = zp.shape
    blocks = zp.reshape(B, T, Hp // k, k, Wp // k, k, D)
    gw = np.einsum("bthiwjd,bthwd->ijd", blocks, g)
    gb = g.sum(axis=(0, 1, 2, 3))
    gp = (g[:, :, :, None, :, None, :] * weight[None, None, None, :, None, :, :]).reshape(B, T, Hp, Wp, D)
    H, W = z.shape[2], z.shape[3]
    # replicated edge taps feed back into the last row / column
    gz = gp[:, :, :H, :W, :].copy()
    if Hp > H:
        gz[:, :, H - 1, :, :] += gp[:, :, H:, :W, :].sum(axis=2)
    if Wp > W:
        gz[:, :, :, W - 1, :] += gp[:, :, :H, W:, :].sum(axis=3)
    if Hp > H and Wp > W:
        gz[:, :, H - 1, W - 1, :] += gp[:, :, H:, W:, :].sum(axis=(2, 3))
    return gz, gw, gb


def _fwd_conv3d(z, weight, bias):
    return _nn.conv3d(z, _nn.Kernel3D(weight, bias))


def _vjp_conv3d(g, out, z, weight, bias):
    kt, kh, kw, _, _ = weight.shape
    B, T, H, W, _ = z.shape
    pad = np.pad(z, ((0, 0), (kt // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2, (0, 0)))
    gpad = np.zeros_like(pad, dtype=np.result_type(g, weight))
    gw = np.zeros_like(weight, dtype=np.result_type(g, z))
    gflat = g.reshape(-1, g.shape[-1])
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                sl = (slice(None), slice(a, a + T), slice(b, b + H), slice(c, c + W), slice(None))
                gpad[sl] += g @ weight[a, b, c].T
                gw[a, b, c] = pad[sl].reshape(-1, pad.shape[-1]).T @ gflat
    gz = gpad[:, kt // 2 : kt // 2 + T, kh // 2 : kh // 2 + H, kw // 2 : kw // 2 + W, :]
    return gz, gw, g.sum(axis=(0, 1, 2, 3))


def _vjp_resample(g, out, z, H_out, W_out):
    B, T, H, W, D = z.shape
    rh = _nn.resample_matrix(H, H_out).astype(g.dtype)
    rw = _nn.resample_matrix(W, W_out).astype(g.dtype)
    y = np.matmul(rw.T, g)  # (B, T, Ho, W, D)
    y = np.matmul(rh.T, y.reshape(B, T, H_out, W * D))
    return (y.reshape(B, T, H, W, D),)


def _vjp_layer_norm(g, out, x, gain, bias, eps=1e-5):
    mu = np.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt(np.mean(xc * xc, axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gxhat = g * gain
    d = x.shape[-1]
    gx = inv / d * (d * gxhat - gxhat.sum(-1, keepdims=True) - xhat * (gxhat * xhat).sum(-1, keepdims=True))
    return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)


def _attention_core_vjp(g, out, q, k, v, heads=1):
    *lead, n, d = q.shape
    dh = d // heads

    def split(x):
        return np.moveaxis(x.reshape(*lead, x.shape[-2], heads, dh), -2, -3)

    def merge(x):
        return np.moveaxis(x, -3, -2).reshape(*lead, x.shape[-2], heads * dh)

    scale = 1.0 / math.sqrt(dh)
    qh, kh, vh, gh = split(q), split(k), split(v), split(g)
    p = _nn.softmax(np.matmul(qh * scale, _swap(kh)))
    gv = np.matmul(_swap(p), gh)
    gp = np.matmul(gh, _swap(vh))
    gs = p * (gp - np.sum(gp * p, axis=-1, keepdims=True))
    gq = np.matmul(gs, kh) * scale
    gk = np.matmul(_swap(gs), qh) * scale
    return merge(gq), merge(gk), merge(gv)


def _vjp_softmax(g, y, x, axis=-1):
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


def _vjp_silu(g, out, x):
    s = _nn.sigmoid(x)
    return (g * (s + x * s * (1 - s)),)


def _vjp_matmul(g, out, a, b):
    # promote vectors the way np.matmul does, then drop the added axis
    a2 = a[None, :] if a.ndim == 1 else a
    b2 = b[:, None] if b.ndim == 1 else b
    g2 = np.asarray(g)
    if a.ndim == 1:
        g2 = np.expand_dims(g2, -2)
    if b.ndim == 1:
        g2 = np.expand_dims(g2, -1)
    ga = _unbroadcast(np.matmul(g2, _swap(b2)), a2.shape)
    gb = _unbroadcast(np.matmul(_swap(a2), g2), b2.shape)
    return ga.reshape(a.shape), gb.reshape(b.shape)


def _fwd_scores(q, k, scale=1.0):
    return _nn.matmul(q, _swap(k)) * scale


def _vjp_scores(g, out, q, k, scale=1.0):
    return (_unbroadcast(np.matmul(g, k) * scale, q.shape),
            _unbroadcast(np.matmul(_swap(g), q) * scale, k.shape))


PRIMITIVES = {
    "add": (lambda a, b: a + b, lambda g, o, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(g, np.shape(b)))),
    "sub": (lambda a, b: a - b, lambda g, o, a, b: (_unbroadcast(g, np.shape(a)), _unbroadcast(-g, np.shape(b)))),
    "mul": (lambda a, b: a * b, lambda g, o, a, b: (_unbroadcast(g * b, np.shape(a)), _unbroadcast(g * a, np.shape(b)))),
    "matmul": (lambda a, b: _nn.matmul(a, b), _vjp_matmul),
    "sum": (lambda x: np.sum(x), lambda g, o, x: (np.broadcast_to(g, x.shape).copy(),)),
    "reshape": (lambda x, shape: np.reshape(x, shape), lambda g, o, x, shape: (np.reshape(g, x.shape),)),
    "softmax": (_nn.softmax, _vjp_softmax),
    "silu": (_nn.silu, _vjp_silu),
    "sigmoid": (_nn.sigmoid, lambda g, o, x: (g * o * (1 - o),)),
    "layer_norm": (_nn.layer_norm, _vjp_layer_norm),
    "attention_scores": (_fwd_scores, _vjp_scores),
    "attention_apply": (lambda p, v: _nn.matmul(p, v), _vjp_matmul),
    "attention": (_attn.attention_core, _attention_core_vjp),
    "depthwise_compress": (_fwd_depthwise, _vjp_depthwise),
    "conv3d": (_fwd_conv3d, _vjp_conv3d),
    "bilinear_resample": (lambda z, H_out, W_out: _nn.bilinear_resample(z, H_out, W_out), _vjp_resample),
}


class _Ops:
    def __getattr__(self, name):
        if name.startswith("__") or name not in PRIMITIVES:
            raise UnsupportedOpError(f"{name!r} is not a differentiable primitive")
        return self._bind(name)


class ArrayOps(_Ops):
    """Untaped evaluation of the primitive table."""

    def _bind(self, name):
        return PRIMITIVES[name][0]


array_ops = ArrayOps()


@dataclass
class Node:
    op: str
    inputs: tuple  # tape value indices, None for constants
    output: int
    saved: tuple  # raw input arrays
    options: dict


@dataclass
class Tape:
    """Values and primitive applications in execution order."""

    values: list = field(default_factory=list)
    nodes: list = field(default_factory=list)
    leaves: list = field(default_factory=list)
    output: int | None = None

    def push(self, value) -> "Var":
        self.values.append(value)
        return Var(self, len(self.values) - 1)


@dataclass(frozen=True)
class Var:
    tape: Tape
    index: int

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self):
        return np.shape(self.value)


class TapeOps(_Ops):
    def __init__(self, tape: Tape):
        self.tape = tape

    def _bind(self, name):
        fwd = PRIMITIVES[name][0]

        def apply(*args, **options):
            refs, arrays = [], []
            for a in args:
                if isinstance(a, Var):
                    if a.tape is not self.tape:
                        raise ValueError("variable belongs to a different tape")
                    refs.append(a.index)
                    arrays.append(a.value)
                else:
                    refs.append(None)
                    arrays.append(np.asarray(a))
            out = self.tape.push(fwd(*arrays, **options))
            self.tape.nodes.append(Node(name, tuple(refs), out.index, tuple(arrays), options))
            return out

        return apply


def record_forward(f, *inputs):
    """Evaluate ``f(ops, *inputs)`` on a fresh tape; return (output, tape)."""
    tape = Tape()
    leaves = []
    for x in inputs:
        v = tape.push(np.asarray(x))
        tape.leaves.append(v.index)
        leaves.append(v)
    out = f(TapeOps(tape), *leaves)
    if not isinstance(out, Var):
        raise ValueError("composite must return a recorded value")
    tape.output = out.index
    return out.value, tape


def backward(tape: Tape, cotangent) -> list[np.ndarray]:
    """Gradients of <cotangent, output> with respect to every leaf, in input order."""
    out = tape.values[tape.output]
    cot = np.asarray(cotangent, dtype=np.result_type(out, np.float32))
    if cot.shape != np.shape(out):
        raise ValueError(f"cotangent shape {cot.shape} does not match output shape {np.shape(out)}")
    grads = {tape.output: cot}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output, None)
        if g is None:
            continue
        vjp = PRIMITIVES[node.op][1]
        parts = vjp(g, tape.values[node.output], *node.saved, **node.options)
        for ref, part in zip(node.inputs, parts):
            if ref is None:
                continue
            grads[ref] = grads[ref] + part if ref in grads else part
    return [grads.get(i, np.zeros_like(tape.values[i])) for i in tape.leaves]


def _fd_step(x: float, eps: float, floor: float) -> float:
    return max(eps * abs(x), floor)


def gradients(f, point, eps: float = 1e-5, floor: float = 1e-6):
    """Reverse-mode and central-difference gradients of scalar ``f`` at ``point``.

    Computation is in float64. Returns two lists aligned with the inputs.
    """
    xs = [np.array(x, dtype=np.float64) for x in (point if isinstance(point, (tuple, list)) else (point,))]
    value, tape = record_forward(f, *xs)
    if np.size(value) != 1:
        raise ValueError(f"finite-difference check needs a scalar function, got shape {np.shape(value)}")
    ad = backward(tape, np.ones_like(value))
    fd = []
    for i, x in enumerate(xs):
        gi = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            h = _fd_step(x[idx], eps, floor)
            orig = x[idx]
            x[idx] = up = orig + h
            hi = float(f(array_ops, *xs))
            x[idx] = down = orig - h
            lo = float(f(array_ops, *xs))
            x[idx] = orig
            gi[idx] = (hi - lo) / (up - down)
        fd.append(gi)
    return ad, fd


def max_relative_error(ad, fd) -> float:
    return max(float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)), initial=0.0)) for a, b in zip(ad, fd))


def finite_diff_check(f, point, eps: float = 1e-5) -> float:
    """max |g_ad - g_fd| / max(1, |g_fd|) over all input coordinates."""
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return max_relative_error(*gradients(f, point, eps))
