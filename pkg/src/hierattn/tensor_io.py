"""Binary tensor files.

Layout, all little-endian with no padding::

    b"UGT1" | u32 rank | rank x u32 dims | float32 payload (row-major)
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

MAGIC = b"UGT1"


class TensorFileError(ValueError):
    pass


class TensorFormatError(TensorFileError):
    """Header is not a valid tensor header."""


class TensorTruncatedError(TensorFileError):
    """File ends before the declared payload."""


def encode_tensor(z) -> bytes:
    arr = np.asarray(z)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    header = MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise TensorFormatError(f"bad magic {buf[:4]!r}")
        raise TensorTruncatedError(f"header truncated at {len(buf)} bytes")
    if buf[:4] != MAGIC:
        raise TensorFormatError(f"bad magic {buf[:4]!r}")
    (rank,) = struct.unpack_from("<I", buf, 4)
    dims_end = 8 + 4 * rank
    if len(buf) < dims_end:
        raise TensorTruncatedError(f"dims truncated: need {dims_end} bytes, have {len(buf)}")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = dims_end + 4 * count
    if len(buf) < end:
        raise TensorTruncatedError(f"payload truncated: need {end} bytes, have {len(buf)}")
    if len(buf) > end:
        raise TensorFormatError(f"{len(buf) - end} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=dims_end)
    return data.astype(np.float32).reshape(dims)


def write_tensor(path, z) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_tensor(z))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def save_arrays(directory, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write one tensor file per named array plus ``manifest.json``.

    The manifest holds ``{"tensors": [{"name", "file", "shape"}, ...]}`` and
    any extra top-level keys passed in ``meta``.
    """
    os.makedirs(directory, exist_ok=True)
    manifest = []
    for i, (name, arr) in enumerate(arrays.items()):
        fname = f"{i:04d}.ugt"
        write_tensor(os.path.join(directory, fname), arr)
        manifest.append({"name": name, "file": fname, "shape": list(np.shape(arr))})
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump({**(meta or {}), "tensors": manifest}, fh, indent=1)


def load_manifest(directory) -> dict:
    with open(os.path.join(directory, "manifest.json")) as fh:
        return json.load(fh)


def load_arrays(directory) -> dict[str, np.ndarray]:
    manifest = load_manifest(directory)
    out = {}
    for entry in manifest["tensors"]:
        arr = read_tensor(os.path.join(directory, entry["file"]))
        if list(arr.shape) != list(entry["shape"]):
            raise TensorFormatError(
                f"{entry['name']}: manifest shape {entry['shape']} != file shape {list(arr.shape)}"
            )
        out[entry["name"]] = arr
    return out
