"""Reference computations: full attention, a literal resampler, and the
degenerate-layout equivalence check."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import ResourceLimitError, check_latent
from .block import BlockConfig, BlockParams, attend, block_forward, init_model
from .latent import random_latent

MAX_ORACLE_TOKENS = 16384


def full_attention_block(z, t: float, p: BlockParams, counter=None,
                         max_tokens: int = MAX_ORACLE_TOKENS) -> np.ndarray:
    """One pre-norm attention + FFN sub-block over all T*H*W sites jointly.

    ``t`` is accepted for signature parity with ``block_forward``; the
    sub-block itself has no timestep input.
    """
    z = check_latent(z)
    n = z.shape[1] * z.shape[2] * z.shape[3]
    if n > max_tokens:
        raise ResourceLimitError(f"full attention over {n} tokens exceeds the guard of {max_tokens}")
    return attend(z, p.weights, p.norm, counter)


def brute_force_resample(frame, H_out: int, W_out: int) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    H, W = frame.shape
    out = np.zeros((H_out, W_out))
    for i in range(H_out):
        sy = (i + 0.5) * H / H_out - 0.5
        sy = min(max(sy, 0.0), H - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, H - 1)
        fy = sy - y0
        for j in range(W_out):
            sx = (j + 0.5) * W / W_out - 0.5
            sx = min(max(sx, 0.0), W - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, W - 1)
            fx = sx - x0
            top = frame[y0, x0] * (1 - fx) + frame[y0, x1] * fx
            bottom = frame[y1, x0] * (1 - fx) + frame[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bottom * fy
    return out


@dataclass
class EquivalenceReport:
    config: str
    max_abs_diff: float
    max_rel_diff: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_diff <= self.tolerance

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "max_abs_diff": self.max_abs_diff,
            "max_rel_diff": self.max_rel_diff,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def degenerate_setup(seed: int, dims, heads: int = 1):
    """Latent, config and params for the layout that collapses to full attention.

    One local window (K = 1), one hierarchical window with factor-1
    compression, factor-1 global compression, zero LoRA residuals, identity
    decompression kernels and both gates at alpha = 0.5. Every branch then
    computes the same full-attention sub-block, so the fused output is that
    sub-block exactly.
    """
    B, T, H, W, D = dims
    cfg = BlockConfig(K=1, D=D, r=min(2, D // 4), heads=heads, k=1, hier_factor=1)
    (p,) = init_model([cfg], seed)
    z = random_latent(dims, seed)
    return z, cfg, p


def assert_degenerate_equivalence(seed: int, dims, tolerance: float, t: float = 500.0,
                                  perturb=None, heads: int = 1) -> EquivalenceReport:
    """Compare ``block_forward`` in the degenerate layout with the oracle.

    ``perturb`` may mutate the block params in place before the decomposed
    forward pass (the oracle keeps the unperturbed copy of what it reads).
    """
    z, cfg, p = degenerate_setup(seed, dims, heads)
    n = dims[1] * dims[2] * dims[3]
    if n > MAX_ORACLE_TOKENS:
        raise ResourceLimitError(f"full attention over {n} tokens exceeds the guard of {MAX_ORACLE_TOKENS}")
    ref = full_attention_block(z, t, p).astype(np.float64)
    if perturb is not None:
        perturb(p)
    out = block_forward(z, t, cfg, p).astype(np.float64)
    diff = np.abs(out - ref)
    rel = diff / np.maximum(np.abs(ref), 1e-12)
    desc = f"seed={seed} dims={tuple(dims)} heads={heads} K=1 k=1 hier_factor=1 lora=0 alpha=0.5"
    return EquivalenceReport(desc, float(diff.max()), float(rel.max()), float(tolerance))
