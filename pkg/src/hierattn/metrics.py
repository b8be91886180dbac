"""Detail-loss metric: how much of a video survives a down/up resampling trip."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_latent
from .nn import bilinear_resample

HD_EXPONENTS = (3, 4, 5)


@dataclass(frozen=True)
class HdMseResult:
    per_factor: dict  # downsample factor -> mean squared error

    @property
    def total(self) -> float:
        return sum(self.per_factor[f] for f in sorted(self.per_factor))

    def as_dict(self) -> dict:
        return {"per_factor": {str(f): v for f, v in sorted(self.per_factor.items())}, "total": self.total}


def hd_mse(v) -> HdMseResult:
    """Sum over factors 8, 16 and 32 of the MSE between ``v`` and its
    bilinear downsample-then-upsample reconstruction.

    ``v`` is a (B, T, H, W, C) array with H, W >= 32. The reduced size is
    ceil(H / factor) x ceil(W / factor). Computed in float64.
    """
    v = check_latent(v, "video").astype(np.float64)
    H, W = v.shape[2], v.shape[3]
    if min(H, W) < 2 ** HD_EXPONENTS[-1]:
        raise ValueError(f"frames must be at least 32x32, got {H}x{W}")
    per = {}
    for e in HD_EXPONENTS:
        f = 2**e
        down = bilinear_resample(v, -(-H // f), -(-W // f))
        rec = bilinear_resample(down, H, W)
        per[f] = float(np.mean((v - rec) ** 2))
    return HdMseResult(per)
