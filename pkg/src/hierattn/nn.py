"""Forward numeric primitives on (B, T, H, W, D) latents and token arrays.

Tokens are row vectors, so a projection is ``x @ W`` with ``W`` of shape
(d_in, d_out). Every function preserves the floating dtype of its main input.

Functions that perform matrix products accept an optional ``counter``: any
object with an ``add(kind, flops)`` method. A product of an (m, k) and a
(k, n) matrix is charged ``2 * m * k * n`` FLOPs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ._validation import check_latent, check_positive_int

SIN_BASE = 10000.0


def matmul(a, b, counter=None, kind: str = "other"):
    out = np.matmul(a, b)
    if counter is not None:
        m = a.shape[-2] if a.ndim > 1 else 1
        n = b.shape[-1] if b.ndim > 1 else 1
        batch = int(np.prod(out.shape[:-2], dtype=np.int64)) if out.ndim > 2 else 1
        counter.add(kind, 2 * batch * m * a.shape[-1] * n)
    return out


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x)
    if x.size == 0 or x.shape[axis] == 0:
        raise ValueError("softmax of an empty input")
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(x):
    return expit(x)


def silu(x):
    """x * sigmoid(x); the activation used by every MLP in this package."""
    return x * expit(x)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    """Normalise over the last axis, then apply per-channel scale and shift."""
    mu = np.mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


# --------------------------------------------------------------------------
# Depthwise strided compression


@dataclass
class DepthwiseKernel2D:
    """One k x k kernel per channel, applied with stride k."""

    weight: np.ndarray  # (k, k, D)
    bias: np.ndarray  # (D,)

    @classmethod
    def average(cls, k: int, D: int, dtype=np.float32) -> "DepthwiseKernel2D":
        k = check_positive_int(k, "k")
        D = check_positive_int(D, "D")
        return cls(np.full((k, k, D), 1.0 / (k * k), dtype=dtype), np.zeros(D, dtype=dtype))

    @property
    def k(self) -> int:
        return self.weight.shape[0]

    def __post_init__(self):
        if self.weight.ndim != 3 or self.weight.shape[0] != self.weight.shape[1]:
            raise ValueError(f"depthwise weight must be (k, k, D), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[2],):
            raise ValueError(f"bias shape {self.bias.shape} does not match D={self.weight.shape[2]}")


def _edge_pad_hw(z: np.ndarray, k: int) -> np.ndarray:
    H, W = z.shape[2], z.shape[3]
    ph, pw = (-H) % k, (-W) % k
    if ph == 0 and pw == 0:
        return z
    return np.pad(z, ((0, 0), (0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")


def compressed_size(n: int, k: int, ceil_mode: bool) -> int:
    return -(-n // k) if ceil_mode else n // k


def depthwise_compress(z, kern: DepthwiseKernel2D, ceil_mode: bool = False) -> np.ndarray:
    """Frame-wise depthwise k x k convolution with stride k.

    With ``ceil_mode`` the output is ceil(H/k) x ceil(W/k) and taps falling
    past the last row or column read the edge value; otherwise H and W must be
    divisible by k.
    """
    z = check_latent(z)
    k = kern.k
    if kern.weight.shape[2] != z.shape[4]:
        raise ValueError(f"kernel has {kern.weight.shape[2]} channels, latent has {z.shape[4]}")
    if not ceil_mode:
        for axis, n in (("H", z.shape[2]), ("W", z.shape[3])):
            if n % k:
                raise ValueError(f"{axis}={n} is not divisible by compression factor k={k}")
    zp = _edge_pad_hw(z, k)
    B, T, H, W, D = zp.shape
    blocks = zp.reshape(B, T, H // k, k, W // k, k, D)
    out = np.einsum("bthiwjd,ijd->bthwd", blocks, kern.weight)
    return out + kern.bias


def average_pool(z, k: int) -> np.ndarray:
    """Plain k x k mean pooling, used as an independent reference."""
    z = np.asarray(z)
    B, T, H, W, D = z.shape
    out = np.zeros((B, T, H // k, W // k, D), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += z[:, :, i::k, j::k, :][:, :, : H // k, : W // k, :]
    return out / (k * k)


# --------------------------------------------------------------------------
# Half-pixel bilinear resampling


def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) interpolation weights with half-pixel centres.

    Output sample d reads source coordinate (d + 0.5) * n_in / n_out - 0.5,
    clamped to [0, n_in - 1], and blends its two integer neighbours.
    """
    n_in = check_positive_int(n_in, "n_in")
    n_out = check_positive_int(n_out, "n_out")
    m = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for d in range(n_out):
        s = min(max((d + 0.5) * scale - 0.5, 0.0), n_in - 1.0)
        i0 = int(math.floor(s))
        i1 = min(i0 + 1, n_in - 1)
        frac = s - i0
        m[d, i0] += 1.0 - frac
        m[d, i1] += frac
    return m


def bilinear_resample(z, H_out: int, W_out: int, counter=None) -> np.ndarray:
    z = check_latent(z)
    B, T, H, W, D = z.shape
    rh = resample_matrix(H, H_out).astype(z.dtype)
    rw = resample_matrix(W, W_out).astype(z.dtype)
    # rows: (Ho, H) @ (B, T, H, W*D)
    y = matmul(rh, z.reshape(B, T, H, W * D), counter).reshape(B, T, H_out, W, D)
    # columns: (Wo, W) @ (B, T, Ho, W, D)
    return matmul(rw, y, counter)


# --------------------------------------------------------------------------
# 3D convolution


@dataclass
class Kernel3D:
    """Dense (kt, kh, kw, D_in, D_out) kernel; stride 1, zero padding."""

    weight: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weight.ndim != 5:
            raise ValueError(f"Kernel3D weight must be (kt, kh, kw, Din, Dout), got {self.weight.shape}")
        for n in self.weight.shape[:3]:
            if n % 2 == 0:
                raise ValueError(f"kernel extents must be odd, got {self.weight.shape[:3]}")
        if self.bias.shape != (self.weight.shape[4],):
            raise ValueError(f"bias shape {self.bias.shape} does not match Dout={self.weight.shape[4]}")

    @classmethod
    def identity(cls, D: int, extent=(3, 3, 3), dtype=np.float32) -> "Kernel3D":
        w = np.zeros(tuple(extent) + (D, D), dtype=dtype)
        w[extent[0] // 2, extent[1] // 2, extent[2] // 2] = np.eye(D, dtype=dtype)
        return cls(w, np.zeros(D, dtype=dtype))


def conv3d(z, kern: Kernel3D, counter=None) -> np.ndarray:
    z = check_latent(z)
    kt, kh, kw, din, dout = kern.weight.shape
    if z.shape[4] != din:
        raise ValueError(f"kernel expects {din} input channels, latent has {z.shape[4]}")
    B, T, H, W, _ = z.shape
    pad = np.pad(z, ((0, 0), (kt // 2,) * 2, (kh // 2,) * 2, (kw // 2,) * 2, (0, 0)))
    out = np.zeros((B, T, H, W, dout), dtype=np.result_type(z, kern.weight))
    for a in range(kt):
        for b in range(kh):
            for c in range(kw):
                window = pad[:, a : a + T, b : b + H, c : c + W, :]
                out += matmul(window, kern.weight[a, b, c], counter)
    return out + kern.bias


# --------------------------------------------------------------------------
# Timestep encoding and small MLPs


def sin_frequencies(dim: int) -> np.ndarray:
    half = dim // 2
    return SIN_BASE ** (-2.0 * np.arange(half) / dim)


def sin_encode(t: float, dim: int = 256) -> np.ndarray:
    """[sin(t * w_j)..., cos(t * w_j)...] with w_j = 10000 ** (-2j / dim)."""
    if isinstance(dim, bool) or not isinstance(dim, (int, np.integer)) or dim < 2 or dim % 2:
        raise ValueError(f"dim must be an even integer >= 2, got {dim!r}")
    args = float(t) * sin_frequencies(dim)
    return np.concatenate([np.sin(args), np.cos(args)])


@dataclass
class MLP2:
    w1: np.ndarray  # (in, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, out)
    b2: np.ndarray
    activation: str = field(default="silu")

    def __post_init__(self):
        if self.w1.ndim != 2 or self.w2.ndim != 2 or self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError(f"inconsistent MLP shapes {self.w1.shape} and {self.w2.shape}")
        if self.b1.shape != (self.w1.shape[1],) or self.b2.shape != (self.w2.shape[1],):
            raise ValueError("MLP bias shapes do not match weights")


def mlp_forward(x, mlp: MLP2, counter=None) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != mlp.w1.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match MLP input {mlp.w1.shape[0]}")
    h = silu(matmul(x, mlp.w1, counter) + mlp.b1)
    return matmul(h, mlp.w2, counter) + mlp.b2
