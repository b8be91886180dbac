"""Global-local windowed attention block for video latents.

Each block runs three branches over a (B, T, H, W, D) latent and blends them
with two timestep-conditioned gates:

* ``local_branch``: attention inside a P x P grid of spatial windows, every
  window spanning all frames. P alternates between K and K + 1 with layer
  parity so window borders of adjacent layers interleave.
* ``hierarchical_branch``: coarser windows (K/2 or K/2 + 1 per axis), each
  compressed 2x spatially before attention and restored afterwards.
* ``global_branch``: attention over the whole latent after k x k depthwise
  compression, restored by bilinear upsampling and a 3D convolution.

All branches share one base weight set; the hierarchical and global branches
add their own low-rank residuals.
"""

from __future__ import annotations

import contextlib
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from ._validation import check_latent, check_same_shape
from .attention import AttentionWeights, LoRAAdapter, PreNorm, apply_lora, sub_block
from .latent import aggregate, make_partition, make_rng, partition, uniform
from .nn import (
    MLP2,
    DepthwiseKernel2D,
    Kernel3D,
    bilinear_resample,
    conv3d,
    depthwise_compress,
    mlp_forward,
    sigmoid,
    sin_encode,
)

GATE_ENCODING_DIM = 256


@dataclass(frozen=True)
class BlockConfig:
    """Shape and layout hyper-parameters of one block.

    ``k`` (global compression) defaults to ``K``. ``K = 1`` is accepted only
    as the single-window degenerate layout used for oracle comparisons; it
    does not alternate, so every layer keeps one window.
    """

    K: int = 2
    D: int = 8
    r: int = 2
    d_ff: int | None = None
    heads: int = 1
    layer_index: int = 0
    k: int | None = None
    hier_factor: int = 2

    def __post_init__(self):
        if self.K < 1 or (self.K > 1 and self.K % 2):
            raise ValueError(f"K must be even and >= 2 (or 1 for the degenerate layout), got {self.K}")
        if self.D < 1:
            raise ValueError(f"D must be >= 1, got {self.D}")
        if self.heads < 1 or self.D % self.heads:
            raise ValueError(f"heads={self.heads} must divide D={self.D}")
        if self.r < 0 or 4 * self.r > min(self.D, self.ffn_dim):
            raise ValueError(f"LoRA rank r={self.r} must satisfy 0 <= r <= D/4 (D={self.D})")
        if self.layer_index < 0:
            raise ValueError(f"layer_index must be >= 0, got {self.layer_index}")
        if self.compress < 1 or self.hier_factor < 1:
            raise ValueError("compression factors must be >= 1")

    @property
    def ffn_dim(self) -> int:
        return self.d_ff if self.d_ff is not None else 2 * self.D

    @property
    def compress(self) -> int:
        return self.K if self.k is None else self.k

    @property
    def parity(self) -> int:
        return self.layer_index % 2 if self.K > 1 else 0

    @property
    def local_parts(self) -> int:
        return self.K + self.parity

    @property
    def hier_parts(self) -> int:
        return max(self.K // 2, 1) + self.parity

    def check_input(self, z: np.ndarray) -> None:
        H, W = z.shape[2], z.shape[3]
        if z.shape[4] != self.D:
            raise ValueError(f"latent has D={z.shape[4]}, config expects D={self.D}")
        for axis, n in (("H", H), ("W", W)):
            if n % (2 * self.K):
                raise ValueError(f"{axis}={n} must be divisible by 2K={2 * self.K}")
            if n % self.compress:
                raise ValueError(f"{axis}={n} must be divisible by the global compression factor {self.compress}")
        if self.local_parts > min(H, W) or self.hier_parts > min(H, W):
            raise ValueError(f"(H, W)=({H}, {W}) too small for {self.local_parts} windows per axis")


@dataclass
class FusionGate:
    """alpha(t) = sigmoid(MLP(sin_encode(t))), one coefficient per channel."""

    mlp: MLP2
    encoding_dim: int = GATE_ENCODING_DIM

    @classmethod
    def init(cls, D: int, rng, hidden: int = 64, dtype=np.float32) -> "FusionGate":
        # zero output layer: alpha(t) = 0.5 for every t at construction
        mlp = MLP2(
            w1=uniform(rng, (GATE_ENCODING_DIM, hidden), np.sqrt(3.0 / GATE_ENCODING_DIM), dtype),
            b1=np.zeros(hidden, dtype=dtype),
            w2=np.zeros((hidden, D), dtype=dtype),
            b2=np.zeros(D, dtype=dtype),
        )
        return cls(mlp)

    def alpha(self, t: float, counter=None) -> np.ndarray:
        enc = sin_encode(t, self.encoding_dim)
        return sigmoid(mlp_forward(enc, _as_float64(self.mlp), counter))


def _as_float64(mlp: MLP2) -> MLP2:
    return replace(mlp, w1=mlp.w1.astype(np.float64), b1=mlp.b1.astype(np.float64),
                   w2=mlp.w2.astype(np.float64), b2=mlp.b2.astype(np.float64))


@dataclass
class BlockParams:
    weights: AttentionWeights
    global_lora: LoRAAdapter
    hier_lora: LoRAAdapter
    global_compress: DepthwiseKernel2D
    global_decompress: Kernel3D
    hier_compress: DepthwiseKernel2D
    hier_decompress: Kernel3D
    gate: FusionGate
    local_gate: FusionGate
    norm: PreNorm

    @classmethod
    def init(cls, cfg: BlockConfig, rng, dtype=np.float32) -> "BlockParams":
        """Default initialisation.

        Base weights are random; LoRA residuals, both gates, the compressions
        (average pooling) and decompressions (identity 3D kernel) start in
        their neutral state.
        """
        weights = AttentionWeights.random(cfg.D, cfg.ffn_dim, rng, cfg.heads, dtype)
        return cls(
            weights=weights,
            global_lora=LoRAAdapter.init(weights, cfg.r, rng, dtype=dtype),
            hier_lora=LoRAAdapter.init(weights, cfg.r, rng, dtype=dtype),
            global_compress=DepthwiseKernel2D.average(cfg.compress, cfg.D, dtype),
            global_decompress=Kernel3D.identity(cfg.D, dtype=dtype),
            hier_compress=DepthwiseKernel2D.average(cfg.hier_factor, cfg.D, dtype),
            hier_decompress=Kernel3D.identity(cfg.D, dtype=dtype),
            gate=FusionGate.init(cfg.D, rng, dtype=dtype),
            local_gate=FusionGate.init(cfg.D, rng, dtype=dtype),
            norm=PreNorm.identity(cfg.D, dtype),
        )


def init_model(configs, seed: int, dtype=np.float32) -> list[BlockParams]:
    rng = make_rng(seed)
    return [BlockParams.init(cfg, rng, dtype) for cfg in configs]


def layer_configs(n_layers: int, **kwargs) -> list[BlockConfig]:
    return [BlockConfig(layer_index=i, **kwargs) for i in range(n_layers)]


# --------------------------------------------------------------------------
# Branches


def _scope(counter, name):
    return counter.branch(name) if counter is not None else contextlib.nullcontext()


def _map_windows(fn, windows, threads: int):
    if threads > 1 and len(windows) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, windows))
    return [fn(w) for w in windows]


def attend(win: np.ndarray, w: AttentionWeights, norm: PreNorm, counter=None) -> np.ndarray:
    """Flatten all T*h*w sites of each batch item into tokens and run a sub-block."""
    B, T, h, ww, D = win.shape
    out = sub_block(win.reshape(B, T * h * ww, D), w, norm, counter)
    return out.reshape(B, T, h, ww, D)


def local_branch(z, cfg: BlockConfig, p: BlockParams, counter=None, threads: int = 1) -> np.ndarray:
    z = check_latent(z)
    spec = make_partition(z.shape[2], z.shape[3], cfg.local_parts)
    outs = _map_windows(lambda win: attend(win, p.weights, p.norm, counter), partition(z, spec), threads)
    return aggregate(outs, spec)


def hierarchical_branch(z, cfg: BlockConfig, p: BlockParams, counter=None, threads: int = 1) -> np.ndarray:
    z = check_latent(z)
    if cfg.K > 1 and cfg.K % 2:
        raise ValueError(f"hierarchical windows need an even K, got {cfg.K}")
    spec = make_partition(z.shape[2], z.shape[3], cfg.hier_parts)
    w = apply_lora(p.weights, p.hier_lora)

    def run(win):
        h, ww = win.shape[2], win.shape[3]
        c = depthwise_compress(win, p.hier_compress, ceil_mode=True)
        y = attend(c, w, p.norm, counter)
        return conv3d(bilinear_resample(y, h, ww, counter), p.hier_decompress, counter)

    return aggregate(_map_windows(run, partition(z, spec), threads), spec)


def global_branch(z, cfg: BlockConfig, p: BlockParams, counter=None) -> np.ndarray:
    z = check_latent(z)
    H, W = z.shape[2], z.shape[3]
    c = depthwise_compress(z, p.global_compress)
    y = attend(c, apply_lora(p.weights, p.global_lora), p.norm, counter)
    return conv3d(bilinear_resample(y, H, W, counter), p.global_decompress, counter)


def fuse(z_a, z_b, t: float, gate: FusionGate, counter=None) -> np.ndarray:
    """alpha(t) * z_a + (1 - alpha(t)) * z_b, per channel."""
    z_a, z_b = np.asarray(z_a), np.asarray(z_b)
    check_same_shape(z_a, z_b, "fused latents")
    alpha = gate.alpha(t, counter)
    if alpha.shape != (z_a.shape[-1],):
        raise ValueError(f"gate produces {alpha.shape[0]} channels, latents have {z_a.shape[-1]}")
    a = alpha.astype(z_a.dtype)
    return a * z_a + (1 - a) * z_b


def block_forward(z, t: float, cfg: BlockConfig, p: BlockParams, counter=None,
                  threads: int = 1, timings: dict | None = None) -> np.ndarray:
    """z_l = fuse(z_hla, z_cro; alpha_local), output = fuse(z_g, z_l; alpha)."""
    z = check_latent(z)
    cfg.check_input(z)
    results = {}
    for name, fn in (
        ("local", lambda: local_branch(z, cfg, p, counter, threads)),
        ("hierarchical", lambda: hierarchical_branch(z, cfg, p, counter, threads)),
        ("global", lambda: global_branch(z, cfg, p, counter)),
    ):
        start = time.perf_counter()
        with _scope(counter, name):
            results[name] = fn()
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start
    with _scope(counter, "gate"):
        z_l = fuse(results["hierarchical"], results["local"], t, p.local_gate, counter)
        return fuse(results["global"], z_l, t, p.gate, counter)


def positional_encoding(T: int, H: int, W: int, D: int, dtype=np.float32) -> np.ndarray:
    """Additive sinusoidal code of the (t, h, w) site coordinates, shape (T, H, W, D).

    Each axis gets ``2 * (D // 6)`` channels; leftover channels are zero.
    """
    per_axis = 2 * (D // 6)
    pe = np.zeros((T, H, W, D), dtype=np.float64)
    if per_axis == 0:
        return pe.astype(dtype)
    grids = np.meshgrid(np.arange(T), np.arange(H), np.arange(W), indexing="ij")
    for axis, coord in enumerate(grids):
        codes = np.stack([sin_encode(c, per_axis) for c in range(coord.max() + 1)])
        pe[..., axis * per_axis : (axis + 1) * per_axis] = codes[coord]
    return pe.astype(dtype)


def model_forward(z, t: float, configs, params, counter=None, threads: int = 1,
                  positional: bool = False, trace: list | None = None) -> np.ndarray:
    """Apply blocks in sequence; layer i must carry ``layer_index == i``.

    When ``trace`` is given, one ``(local PartitionSpec, hierarchical
    PartitionSpec)`` pair per layer is appended to it.
    """
    z = check_latent(z)
    configs, params = list(configs), list(params)
    if len(configs) != len(params) or not configs:
        raise ValueError(f"need matching non-empty configs and params, got {len(configs)} and {len(params)}")
    for i, cfg in enumerate(configs):
        if cfg.layer_index != i:
            raise ValueError(f"layer {i} has layer_index={cfg.layer_index}")
        if cfg.D != configs[0].D:
            raise ValueError("all layers must share D")
    if positional:
        B, T, H, W, D = z.shape
        z = z + positional_encoding(T, H, W, D, z.dtype)
    for cfg, p in zip(configs, params):
        if trace is not None:
            H, W = z.shape[2], z.shape[3]
            trace.append((make_partition(H, W, cfg.local_parts), make_partition(H, W, cfg.hier_parts)))
        z = block_forward(z, t, cfg, p, counter, threads)
    return z


# --------------------------------------------------------------------------
# Serialisation to named arrays


def params_to_arrays(p: BlockParams, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    w = p.weights
    for name in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2"):
        out[f"{prefix}weights.{name}"] = getattr(w, name)
    for tag, lora in (("global_lora", p.global_lora), ("hier_lora", p.hier_lora)):
        for name, (a, b) in lora.factors.items():
            out[f"{prefix}{tag}.{name}.A"] = a
            out[f"{prefix}{tag}.{name}.B"] = b
    for tag in ("global_compress", "global_decompress", "hier_compress", "hier_decompress"):
        kern = getattr(p, tag)
        out[f"{prefix}{tag}.weight"] = kern.weight
        out[f"{prefix}{tag}.bias"] = kern.bias
    for tag in ("gate", "local_gate"):
        mlp = getattr(p, tag).mlp
        for name in ("w1", "b1", "w2", "b2"):
            out[f"{prefix}{tag}.{name}"] = getattr(mlp, name)
    for name in ("g1", "b1", "g2", "b2"):
        out[f"{prefix}norm.{name}"] = getattr(p.norm, name)
    return out


def params_from_arrays(arrays: dict, cfg: BlockConfig, prefix: str = "") -> BlockParams:
    def get(name):
        return arrays[prefix + name]

    weights = AttentionWeights(
        **{n: get(f"weights.{n}") for n in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2")},
        heads=cfg.heads,
    )

    def lora(tag):
        names = sorted({key[len(prefix + tag) + 1 :].rsplit(".", 1)[0]
                        for key in arrays if key.startswith(f"{prefix}{tag}.")})
        return LoRAAdapter(cfg.r, {n: (get(f"{tag}.{n}.A"), get(f"{tag}.{n}.B")) for n in names})

    def gate(tag):
        return FusionGate(MLP2(*(get(f"{tag}.{n}") for n in ("w1", "b1", "w2", "b2"))))

    return BlockParams(
        weights=weights,
        global_lora=lora("global_lora"),
        hier_lora=lora("hier_lora"),
        global_compress=DepthwiseKernel2D(get("global_compress.weight"), get("global_compress.bias")),
        global_decompress=Kernel3D(get("global_decompress.weight"), get("global_decompress.bias")),
        hier_compress=DepthwiseKernel2D(get("hier_compress.weight"), get("hier_compress.bias")),
        hier_decompress=Kernel3D(get("hier_decompress.weight"), get("hier_decompress.bias")),
        gate=gate("gate"),
        local_gate=gate("local_gate"),
        norm=PreNorm(*(get(f"norm.{n}") for n in ("g1", "b1", "g2", "b2"))),
    )


def save_model(directory, configs, params) -> None:
    """One tensor file per parameter plus a JSON manifest (see tensor_io)."""
    from .tensor_io import save_arrays

    arrays = {}
    for i, p in enumerate(params):
        arrays.update(params_to_arrays(p, f"layer{i}."))
    save_arrays(directory, arrays, meta={"configs": [cfg.__dict__ for cfg in configs]})


def load_model(directory):
    from .tensor_io import load_arrays, load_manifest

    arrays = load_arrays(directory)
    configs = [BlockConfig(**c) for c in load_manifest(directory)["configs"]]
    return configs, [params_from_arrays(arrays, cfg, f"layer{i}.") for i, cfg in enumerate(configs)]
