"""Scaled dot-product self-attention, the FFN, and low-rank weight residuals."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .latent import uniform
from .nn import layer_norm, matmul, silu

# Upper bound on score-matrix elements held at once; queries are processed in
# row chunks of this many elements.
SCORE_CHUNK_ELEMS = 1 << 23

LORA_TARGETS = ("wq", "wk", "wv", "w1", "w2")


@dataclass
class AttentionWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray  # (D, D_ff)
    b1: np.ndarray
    w2: np.ndarray  # (D_ff, D)
    b2: np.ndarray
    heads: int = 1

    def __post_init__(self):
        D = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (D, D):
                raise ValueError(f"{name} must be ({D}, {D}), got {getattr(self, name).shape}")
        d_ff = self.w1.shape[1]
        if self.w1.shape != (D, d_ff) or self.w2.shape != (d_ff, D):
            raise ValueError(f"FFN shapes {self.w1.shape}, {self.w2.shape} inconsistent with D={D}")
        if self.b1.shape != (d_ff,) or self.b2.shape != (D,):
            raise ValueError("FFN bias shapes do not match weights")
        if self.heads < 1 or D % self.heads:
            raise ValueError(f"heads={self.heads} must divide D={D}")

    @property
    def dim(self) -> int:
        return self.wq.shape[0]

    @classmethod
    def random(cls, D: int, d_ff: int, rng, heads: int = 1, dtype=np.float32):
        s, s_ff = math.sqrt(3.0 / D), math.sqrt(3.0 / d_ff)
        return cls(
            wq=uniform(rng, (D, D), s, dtype),
            wk=uniform(rng, (D, D), s, dtype),
            wv=uniform(rng, (D, D), s, dtype),
            wo=uniform(rng, (D, D), s, dtype),
            w1=uniform(rng, (D, d_ff), s, dtype),
            b1=np.zeros(d_ff, dtype=dtype),
            w2=uniform(rng, (d_ff, D), s_ff, dtype),
            b2=np.zeros(D, dtype=dtype),
            heads=heads,
        )

    def astype(self, dtype) -> "AttentionWeights":
        return replace(self, **{n: getattr(self, n).astype(dtype) for n in _ARRAY_FIELDS})


_ARRAY_FIELDS = ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")


@dataclass
class LoRAAdapter:
    """Low-rank residuals ``A @ B`` for the Q/K/V projections and both FFN layers.

    ``factors`` maps a weight name to ``(A, B)`` with A of shape (d_in, r) and
    B of shape (r, d_out). The output projection is never adapted.
    ``enforce_rank_bound`` rejects r > d/4; switch it off only for
    hand-sized examples.
    """

    rank: int
    factors: dict
    enforce_rank_bound: bool = True

    def __post_init__(self):
        for name, (a, b) in self.factors.items():
            if name not in LORA_TARGETS:
                raise ValueError(f"cannot adapt {name!r}; adaptable weights are {LORA_TARGETS}")
            if a.shape[1] != self.rank or b.shape[0] != self.rank:
                raise ValueError(f"{name}: factors {a.shape} x {b.shape} do not have rank {self.rank}")
            if self.enforce_rank_bound and 4 * self.rank > min(a.shape[0], b.shape[1]):
                raise ValueError(
                    f"{name}: rank {self.rank} too large for a {a.shape[0]}x{b.shape[1]} weight (need r <= d/4)"
                )

    @classmethod
    def init(cls, weights: AttentionWeights, rank: int, rng, scale: float = 0.01, dtype=np.float32):
        """Small random A, zero B: the residual starts at exactly zero."""
        factors = {}
        for name in LORA_TARGETS:
            d_in, d_out = getattr(weights, name).shape
            factors[name] = (uniform(rng, (d_in, rank), scale, dtype), np.zeros((rank, d_out), dtype=dtype))
        return cls(rank, factors)


def apply_lora(w: AttentionWeights, adapter: LoRAAdapter) -> AttentionWeights:
    updates = {}
    for name, (a, b) in adapter.factors.items():
        base = getattr(w, name)
        if (a.shape[0], b.shape[1]) != base.shape:
            raise ValueError(f"{name}: LoRA product {(a.shape[0], b.shape[1])} does not match weight {base.shape}")
        updates[name] = (base + a @ b).astype(base.dtype)
    return replace(w, **updates)


def attention_core(q, k, v, heads: int = 1, counter=None) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_head)) V per head, over the second-to-last axis.

    Inputs are (..., N, D). Score rows are produced in chunks so peak memory
    stays bounded for long sequences.
    """
    *lead, n, d = q.shape
    dh = d // heads

    def split(x):
        x = x.reshape(*lead, x.shape[-2], heads, dh)
        return np.moveaxis(x, -2, -3)

    qh, kh, vh = split(q), split(k), split(v)
    qh = qh * np.asarray(1.0 / math.sqrt(dh), dtype=q.dtype)
    kt = np.swapaxes(kh, -1, -2)
    m = kh.shape[-2]
    out = np.empty(qh.shape[:-1] + (vh.shape[-1],), dtype=np.result_type(q, k, v))
    rows = max(1, min(n, SCORE_CHUNK_ELEMS // max(m, 1)))
    for r0 in range(0, n, rows):
        s = matmul(qh[..., r0 : r0 + rows, :], kt, counter, "map")
        s -= np.max(s, axis=-1, keepdims=True)
        np.exp(s, out=s)
        denom = np.sum(s, axis=-1, keepdims=True)
        s /= denom
        out[..., r0 : r0 + rows, :] = matmul(s, vh, counter, "map")
    out = np.moveaxis(out, -3, -2)
    return out.reshape(*lead, n, heads * vh.shape[-1])


def self_attention(tokens, w: AttentionWeights, counter=None) -> np.ndarray:
    """Multi-head self-attention followed by the output projection.

    No residual and no normalisation; :func:`sub_block` adds those.
    """
    x = np.asarray(tokens)
    if x.shape[-1] != w.dim:
        raise ValueError(f"token width {x.shape[-1]} does not match weights D={w.dim}")
    if x.shape[-2] < 1:
        raise ValueError("self_attention needs at least one token")
    q = matmul(x, w.wq, counter)
    k = matmul(x, w.wk, counter)
    v = matmul(x, w.wv, counter)
    return matmul(attention_core(q, k, v, w.heads, counter), w.wo, counter)


def ffn(tokens, w: AttentionWeights, counter=None) -> np.ndarray:
    x = np.asarray(tokens)
    if x.shape[-1] != w.dim:
        raise ValueError(f"token width {x.shape[-1]} does not match weights D={w.dim}")
    return matmul(silu(matmul(x, w.w1, counter) + w.b1), w.w2, counter) + w.b2


@dataclass
class PreNorm:
    """Gains and shifts for the two pre-normalisations of a sub-block."""

    g1: np.ndarray
    b1: np.ndarray
    g2: np.ndarray
    b2: np.ndarray

    @classmethod
    def identity(cls, D: int, dtype=np.float32) -> "PreNorm":
        one, zero = np.ones(D, dtype=dtype), np.zeros(D, dtype=dtype)
        return cls(one, zero, one.copy(), zero.copy())


def sub_block(x, w: AttentionWeights, norm: PreNorm, counter=None) -> np.ndarray:
    """Pre-norm attention and FFN, each with a residual connection."""
    x = x + self_attention(layer_norm(x, norm.g1, norm.b1), w, counter)
    return x + ffn(layer_norm(x, norm.g2, norm.b2), w, counter)
