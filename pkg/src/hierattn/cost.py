"""Attention cost model: closed-form map costs, instrumented FLOP counts and
wall-clock benchmarks.

The analytic model charges an N-token attention map N**2 * D. The counters
charge every matrix product 2 * m * k * n, so each attention contributes
2 * N**2 * D for Q K^T and the same again for P V: four times the analytic
figure.
"""

from __future__ import annotations

import contextlib
import csv
import io
import statistics
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

from threadpoolctl import threadpool_limits

from ._validation import check_positive_int
from .block import BlockConfig, block_forward, init_model
from .latent import make_partition, random_latent
from .nn import compressed_size
from .oracle import MAX_ORACLE_TOKENS, full_attention_block

BRANCHES = ("local", "global", "hierarchical")
CSV_COLUMNS = ("T", "H", "W", "D", "K", "branch", "analytic_map", "counted_map", "counted_total", "wall_ms")
COUNT_TO_ANALYTIC = 4


class FlopCounter:
    """Accumulates matmul FLOPs keyed by (branch, kind).

    ``kind`` is ``"map"`` for the two attention-map products and ``"other"``
    for everything else.
    """

    def __init__(self):
        self.totals = defaultdict(int)
        self._branch = "unscoped"
        self._lock = threading.Lock()

    @contextlib.contextmanager
    def branch(self, name: str):
        prev, self._branch = self._branch, name
        try:
            yield self
        finally:
            self._branch = prev

    def add(self, kind: str, flops: int) -> None:
        with self._lock:
            self.totals[(self._branch, kind)] += int(flops)

    def map(self, branch: str) -> int:
        return self.totals[(branch, "map")]

    def total(self, branch: str) -> int:
        return self.totals[(branch, "map")] + self.totals[(branch, "other")]

    def merge(self, other: "FlopCounter") -> None:
        for key, v in other.totals.items():
            self.totals[key] += v


def _as_int(value: Fraction, what: str) -> int:
    if value.denominator != 1:
        raise ValueError(f"{what} = {value} is not an integer for this configuration")
    return value.numerator


def analytic_map_cost(T: int, H: int, W: int, D: int, K: int, branch: str) -> int:
    """Attention-map cost of one branch with a plain K x K layout."""
    for name, v in (("T", T), ("H", H), ("W", W), ("D", D), ("K", K)):
        check_positive_int(v, name)
    if H % K or W % K:
        raise ValueError(f"H={H}, W={W} must be divisible by K={K}")
    n = T * H * W
    per_window = Fraction(n, K * K)
    if branch == "full":
        return n * n * D
    if branch == "local":
        return _as_int(K * K * per_window**2 * D, "local cost")
    if branch == "global":
        return _as_int(per_window**2 * D, "global cost")
    if branch == "hierarchical":
        return _as_int(Fraction(K, 2) ** 2 * per_window**2 * D, "hierarchical cost")
    if branch == "decomposed":
        return sum(analytic_map_cost(T, H, W, D, K, b) for b in BRANCHES)
    raise ValueError(f"unknown branch {branch!r}")


def speedup(K: int) -> Fraction:
    """Full-attention map cost over the three-branch cost: 4K^4 / (5K^2 + 4)."""
    if isinstance(K, bool) or not isinstance(K, int) or K < 1:
        raise ValueError(f"K must be an integer >= 1, got {K!r}")
    return Fraction(4 * K**4, 5 * K**2 + 4)


def exact_map_cost(T: int, H: int, W: int, D: int, cfg: BlockConfig, branch: str) -> int:
    """Map cost summed window by window for the actual layout of ``cfg``.

    Follows the layer parity (K or K + 1 windows) and ceil-mode compression
    of uneven hierarchical windows, so it matches the counters exactly after
    the factor-4 convention change.
    """
    if branch == "full":
        return (T * H * W) ** 2 * D
    if branch == "local":
        spec = make_partition(H, W, cfg.local_parts)
        return sum((T * h * w) ** 2 * D for h, w in spec.window_shapes())
    if branch == "hierarchical":
        spec = make_partition(H, W, cfg.hier_parts)
        f = cfg.hier_factor
        return sum((T * compressed_size(h, f, True) * compressed_size(w, f, True)) ** 2 * D
                   for h, w in spec.window_shapes())
    if branch == "global":
        return (T * (H // cfg.compress) * (W // cfg.compress)) ** 2 * D
    if branch == "decomposed":
        return sum(exact_map_cost(T, H, W, D, cfg, b) for b in BRANCHES)
    raise ValueError(f"unknown branch {branch!r}")


def counted_flops(cfg: BlockConfig, z, params, t: float = 500.0, include_full: bool = True,
                  max_tokens: int = MAX_ORACLE_TOKENS) -> dict[str, dict[str, int]]:
    """Run the block (and optionally the full oracle) under a counter.

    Returns ``{branch: {"map": ..., "total": ...}}`` for the three branches,
    ``"gate"``, ``"decomposed"`` (everything in the block) and ``"full"``.
    """
    counter = FlopCounter()
    block_forward(z, t, cfg, params, counter)
    if include_full:
        with counter.branch("full"):
            full_attention_block(z, t, params, counter, max_tokens=max_tokens)
    out = {b: {"map": counter.map(b), "total": counter.total(b)} for b in BRANCHES + ("gate",)}
    out["decomposed"] = {
        "map": sum(out[b]["map"] for b in BRANCHES),
        "total": sum(out[b]["total"] for b in BRANCHES + ("gate",)),
    }
    if include_full:
        out["full"] = {"map": counter.map("full"), "total": counter.total("full")}
    return out


@dataclass
class CostReport:
    T: int
    H: int
    W: int
    D: int
    K: int
    heads: int
    layer_index: int
    analytic: dict = field(default_factory=dict)
    counted_map: dict = field(default_factory=dict)
    counted_total: dict = field(default_factory=dict)
    wall_ms: dict = field(default_factory=dict)
    oracle_skipped: bool = False

    @property
    def analytic_speedup(self) -> Fraction | None:
        if "full" in self.analytic and self.analytic.get("decomposed"):
            return Fraction(self.analytic["full"], self.analytic["decomposed"])
        return None

    @property
    def measured_speedup(self) -> float | None:
        if "full" in self.wall_ms and self.wall_ms.get("decomposed"):
            return self.wall_ms["full"] / self.wall_ms["decomposed"]
        return None

    def rows(self) -> list[dict]:
        rows = []
        for b in ("full",) + BRANCHES + ("decomposed",):
            rows.append({
                "T": self.T, "H": self.H, "W": self.W, "D": self.D, "K": self.K, "branch": b,
                "analytic_map": self.analytic.get(b, ""),
                "counted_map": self.counted_map.get(b, ""),
                "counted_total": self.counted_total.get(b, ""),
                "wall_ms": _fmt6(self.wall_ms[b]) if b in self.wall_ms else "",
            })
        rows.append({
            "T": self.T, "H": self.H, "W": self.W, "D": self.D, "K": self.K, "branch": "speedup",
            "analytic_map": _ratio(self.analytic),
            "counted_map": _ratio(self.counted_map),
            "counted_total": _ratio(self.counted_total),
            "wall_ms": _ratio(self.wall_ms),
        })
        return rows


def _fmt6(x: float) -> str:
    return format(x, ".6g")


def _ratio(values: dict) -> str:
    full, dec = values.get("full"), values.get("decomposed")
    if full is None or not dec:
        return ""
    return f"{full / dec:.4f}"


def write_csv(rows, fh=None) -> str:
    buf = fh if fh is not None else io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue() if fh is None else ""


def flops_report(T: int, H: int, W: int, D: int, K: int, heads: int = 1, seed: int = 0,
                 count: bool = True) -> CostReport:
    """Analytic costs, plus instrumented counts when the layout is runnable."""
    report = CostReport(T, H, W, D, K, heads, 0)
    for b in ("full",) + BRANCHES + ("decomposed",):
        report.analytic[b] = analytic_map_cost(T, H, W, D, K, b)
    if not count:
        return report
    try:
        cfg = BlockConfig(K=K, D=D, r=0, heads=heads)
        z = random_latent((1, T, H, W, D), seed)
        cfg.check_input(z)
    except ValueError:
        return report
    (p,) = init_model([cfg], seed)
    counts = counted_flops(cfg, z, p, include_full=T * H * W <= MAX_ORACLE_TOKENS)
    for b in ("full",) + BRANCHES + ("decomposed",):
        if b in counts:
            report.counted_map[b] = counts[b]["map"]
            report.counted_total[b] = counts[b]["total"]
    return report


def _median_ms(samples) -> float:
    return 1000.0 * statistics.median(samples)


def bench(T: int, H: int, W: int, D: int, K: int, repeats: int = 5, seed: int = 0, heads: int = 1,
          layer_index: int = 0, t: float = 500.0, oracle_limit: int = 1 << 17,
          single_thread: bool = True) -> CostReport:
    """Median wall-clock of the full-attention oracle versus one block.

    One warm-up call of each path is made first (and instrumented for the
    FLOP columns); its time is discarded. The oracle is skipped, and
    ``oracle_skipped`` set, when T*H*W exceeds ``oracle_limit``.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    cfg = BlockConfig(K=K, D=D, r=min(4, D // 4), heads=heads, layer_index=layer_index)
    z = random_latent((1, T, H, W, D), seed)
    cfg.check_input(z)
    (p,) = init_model([cfg], seed)
    report = CostReport(T, H, W, D, K, heads, layer_index)
    for b in ("full",) + BRANCHES + ("decomposed",):
        report.analytic[b] = exact_map_cost(T, H, W, D, cfg, b)
    run_oracle = T * H * W <= oracle_limit
    report.oracle_skipped = not run_oracle

    limits = threadpool_limits(1) if single_thread else contextlib.nullcontext()
    with limits:
        counter = FlopCounter()
        block_forward(z, t, cfg, p, counter)
        if run_oracle:
            with counter.branch("full"):
                full_attention_block(z, t, p, counter, max_tokens=oracle_limit)

        branch_samples = defaultdict(list)
        block_samples, full_samples = [], []
        for _ in range(repeats):
            timings = {}
            start = time.perf_counter()
            block_forward(z, t, cfg, p, timings=timings)
            block_samples.append(time.perf_counter() - start)
            for b, v in timings.items():
                branch_samples[b].append(v)
            if run_oracle:
                start = time.perf_counter()
                full_attention_block(z, t, p, max_tokens=oracle_limit)
                full_samples.append(time.perf_counter() - start)

    for b in BRANCHES:
        report.counted_map[b] = counter.map(b)
        report.counted_total[b] = counter.total(b)
        report.wall_ms[b] = _median_ms(branch_samples[b])
    report.counted_map["decomposed"] = sum(counter.map(b) for b in BRANCHES)
    report.counted_total["decomposed"] = sum(counter.total(b) for b in BRANCHES + ("gate",))
    report.wall_ms["decomposed"] = _median_ms(block_samples)
    if run_oracle:
        report.counted_map["full"] = counter.map("full")
        report.counted_total["full"] = counter.total("full")
        report.wall_ms["full"] = _median_ms(full_samples)
    return report
