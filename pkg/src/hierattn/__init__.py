"""Windowed global/local attention for video latents, with a full-attention
oracle, gradient checks, a FLOP cost model and the HD-MSE detail metric."""

from .attention import AttentionWeights, LoRAAdapter, apply_lora, ffn, self_attention, sub_block
from .block import (
    BlockConfig,
    BlockParams,
    FusionGate,
    block_forward,
    fuse,
    global_branch,
    hierarchical_branch,
    init_model,
    layer_configs,
    local_branch,
    model_forward,
)
from .cost import analytic_map_cost, bench, counted_flops, exact_map_cost, speedup
from .estimator import FullVideoAttention, WindowedVideoAttention
from .latent import PartitionSpec, aggregate, make_partition, partition, random_latent
from .metrics import HdMseResult, hd_mse
from .oracle import EquivalenceReport, assert_degenerate_equivalence, brute_force_resample, full_attention_block
from .tensor_io import read_tensor, write_tensor

__version__ = "0.1.0"
