"""Video latents: deterministic generation and spatial window partitioning.

A latent is a plain ``numpy.ndarray`` with axes ``(B, T, H, W, D)``.

Random latents are drawn from numpy's PCG64 bit generator seeded through
``SeedSequence(seed)``. Values come from ``Generator.random`` (the top 53 bits
of each 64-bit output scaled by 2**-53), mapped affinely to [-1, 1) and rounded
to float32. Both steps are exact integer / IEEE operations, so the same seed
yields the same bits on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_latent, check_positive_int


@dataclass(frozen=True)
class PartitionSpec:
    """A P x P tiling of an (H, W) plane into near-equal windows."""

    parts: int
    row_bounds: tuple[int, ...]
    col_bounds: tuple[int, ...]

    @property
    def height(self) -> int:
        return self.row_bounds[-1]

    @property
    def width(self) -> int:
        return self.col_bounds[-1]

    @property
    def n_windows(self) -> int:
        return self.parts * self.parts

    def window_slices(self):
        """Yield (row slice, col slice) pairs in row-major window order."""
        for i in range(self.parts):
            rows = slice(self.row_bounds[i], self.row_bounds[i + 1])
            for j in range(self.parts):
                yield rows, slice(self.col_bounds[j], self.col_bounds[j + 1])

    def window_shapes(self) -> list[tuple[int, int]]:
        return [(r.stop - r.start, c.stop - c.start) for r, c in self.window_slices()]


def _bounds(n: int, parts: int) -> tuple[int, ...]:
    return tuple((i * n) // parts for i in range(parts + 1))


def make_partition(H: int, W: int, P: int) -> PartitionSpec:
    """Split rows and columns at ``floor(i * n / P)``.

    Windows differ in size by at most one along each axis; the remainder goes
    to the later windows.
    """
    H = check_positive_int(H, "H")
    W = check_positive_int(W, "W")
    if isinstance(P, bool) or not isinstance(P, (int, np.integer)):
        raise ValueError(f"P must be an integer, got {P!r}")
    if not 1 <= P <= min(H, W):
        raise ValueError(f"P={P} out of range [1, min(H, W)={min(H, W)}]")
    P = int(P)
    return PartitionSpec(P, _bounds(H, P), _bounds(W, P))


def partition(z, spec: PartitionSpec) -> list[np.ndarray]:
    """Cut ``z`` into ``spec.parts ** 2`` windows in row-major order.

    The windows are views into ``z``; every window keeps the full B, T and D
    extents.
    """
    z = check_latent(z)
    if z.shape[2:4] != (spec.height, spec.width):
        raise ValueError(
            f"partition built for (H, W)=({spec.height}, {spec.width}) "
            f"but latent has {z.shape[2:4]}"
        )
    return [z[:, :, rows, cols, :] for rows, cols in spec.window_slices()]


def aggregate(windows, spec: PartitionSpec) -> np.ndarray:
    """Inverse of :func:`partition`."""
    windows = list(windows)
    if len(windows) != spec.n_windows:
        raise ValueError(f"expected {spec.n_windows} windows, got {len(windows)}")
    first = np.asarray(windows[0])
    if first.ndim != 5:
        raise ValueError(f"windows must have 5 axes, got shape {first.shape}")
    B, T, D = first.shape[0], first.shape[1], first.shape[4]
    dtype = np.result_type(*windows)
    out = np.empty((B, T, spec.height, spec.width, D), dtype=dtype)
    for win, (rows, cols) in zip(windows, spec.window_slices()):
        expected = (B, T, rows.stop - rows.start, cols.stop - cols.start, D)
        if np.shape(win) != expected:
            raise ValueError(f"window shape {np.shape(win)} does not match expected {expected}")
        out[:, :, rows, cols, :] = win
    return out


def interior_bounds(spec: PartitionSpec) -> tuple[set[int], set[int]]:
    """Row and column cut positions strictly inside the plane."""
    return set(spec.row_bounds[1:-1]), set(spec.col_bounds[1:-1])


def random_latent(dims, seed: int, dtype=np.float32) -> np.ndarray:
    dims = tuple(check_positive_int(d, "dim") for d in dims)
    if len(dims) != 5:
        raise ValueError(f"dims must have 5 entries (B, T, H, W, D), got {dims}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))
    u = rng.random(dims)
    return (2.0 * u - 1.0).astype(dtype)


def make_rng(seed: int) -> np.random.Generator:
    """The generator used for all parameter initialisation."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def uniform(rng: np.random.Generator, shape, scale: float, dtype=np.float32) -> np.ndarray:
    """Draw from U(-scale, scale) using only the bit-exact ``random`` stream."""
    return ((2.0 * rng.random(shape) - 1.0) * scale).astype(dtype)
