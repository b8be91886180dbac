"""Input validation helpers shared by the public functions and estimators."""

from __future__ import annotations

import numpy as np


class ResourceLimitError(RuntimeError):
    """Raised when a computation would exceed a configured size guard."""


def check_positive_int(value, name: str) -> int:
    if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, np.integer)):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_latent(z, name: str = "z", allow_int: bool = False) -> np.ndarray:
    """Validate a video latent laid out as (B, T, H, W, D).

    Returns the input as an ndarray without copying when possible. Integer
    input is rejected unless ``allow_int`` is set, and non-finite values are
    always rejected.
    """
    z = np.asarray(z)
    if z.ndim != 5:
        raise ValueError(f"{name} must have 5 axes (B, T, H, W, D), got shape {z.shape}")
    if min(z.shape) < 1:
        raise ValueError(f"{name} has an empty axis: shape {z.shape}")
    if not np.issubdtype(z.dtype, np.floating):
        if not allow_int:
            raise ValueError(f"{name} must be a floating point array, got {z.dtype}")
        z = z.astype(np.float32)
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{name} contains NaN or Inf")
    return z


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} have mismatched shapes {a.shape} and {b.shape}")
