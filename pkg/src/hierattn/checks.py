"""Self-checks shared by ``hierattn verify`` and the test-suite.

The gradient composites here are written against the ``ops`` namespace of
:mod:`hierattn.grad` so they can be both evaluated and differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .block import FusionGate, fuse
from .grad import gradients, max_relative_error
from .latent import aggregate, interior_bounds, make_partition, make_rng, partition, random_latent
from .nn import DepthwiseKernel2D, average_pool, depthwise_compress

GRAD_TOL = 1e-5


def sub_block_ops(ops, x, wq, wk, wv, wo, w1, b1, w2, b2, g1, n1, g2, n2, heads=1):
    """Same operation sequence as :func:`hierattn.attention.sub_block`."""
    h = ops.layer_norm(x, g1, n1)
    q, k, v = ops.matmul(h, wq), ops.matmul(h, wk), ops.matmul(h, wv)
    x = ops.add(x, ops.matmul(ops.attention(q, k, v, heads=heads), wo))
    h = ops.layer_norm(x, g2, n2)
    f = ops.add(ops.matmul(ops.silu(ops.add(ops.matmul(h, w1), b1)), w2), b2)
    return ops.add(x, f)


def softmax_dot_loss(probe):
    def loss(ops, x):
        return ops.sum(ops.mul(ops.softmax(x), probe))

    return loss


def sub_block_loss(probe, heads=1):
    def loss(ops, x, *params):
        return ops.sum(ops.mul(sub_block_ops(ops, x, *params, heads=heads), probe))

    return loss


def compress_attend_decompress_loss(probe, H_out, W_out):
    """depthwise compress -> self-attention -> bilinear upsample -> conv3d."""

    def loss(ops, z, dw_w, dw_b, wq, wk, wv, k3_w, k3_b):
        c = ops.depthwise_compress(z, dw_w, dw_b, ceil_mode=True)
        B, T, h, w, D = c.shape
        tok = ops.reshape(c, shape=(B, T * h * w, D))
        att = ops.attention(ops.matmul(tok, wq), ops.matmul(tok, wk), ops.matmul(tok, wv))
        up = ops.bilinear_resample(ops.reshape(att, shape=(B, T, h, w, D)), H_out=H_out, W_out=W_out)
        return ops.sum(ops.mul(ops.conv3d(up, k3_w, k3_b), probe))

    return loss


def gradient_cases(seed: int = 0):
    """(name, loss, point) triples at tiny sizes, all in float64."""
    rng = np.random.default_rng(seed)
    D, N, Dff = 4, 6, 8

    def r(*shape, s=1.0):
        return rng.normal(size=shape) * s

    cases = [("softmax+dot", softmax_dot_loss(r(7)), (r(7),))]
    sb_params = (r(D, D, s=0.5), r(D, D, s=0.5), r(D, D, s=0.5), r(D, D, s=0.5), r(D, Dff, s=0.5), r(Dff, s=0.1),
                 r(Dff, D, s=0.5), r(D, s=0.1), 1 + r(D, s=0.1), r(D, s=0.1), 1 + r(D, s=0.1), r(D, s=0.1))
    cases.append(("attention sub-block", sub_block_loss(r(N, D)), (r(N, D),) + sb_params))
    B, T, H, W, C = 1, 2, 5, 3, 2
    comp_point = (r(B, T, H, W, C), r(2, 2, C, s=0.5), r(C, s=0.1), r(C, C, s=0.5), r(C, C, s=0.5),
                  r(C, C, s=0.5), r(3, 3, 3, C, C, s=0.3), r(C, s=0.1))
    cases.append(("compress-attend-bilinear-conv3d",
                  compress_attend_decompress_loss(r(B, T, H, W, C), H, W), comp_point))
    return cases


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def as_dict(self) -> dict:
        return {"check": self.name, "passed": self.passed, "detail": self.detail}


def check_partition_roundtrip(cases: int = 100, seed: int = 0) -> CheckResult:
    rng = make_rng(seed)
    for i in range(cases):
        B, T = (int(x) for x in rng.integers(1, 3, size=2))
        H, W, D = (int(x) for x in rng.integers(1, 12, size=3))
        P = int(rng.integers(1, min(H, W) + 1))
        z = random_latent((B, T, H, W, D), seed + i)
        spec = make_partition(H, W, P)
        if not np.array_equal(aggregate(partition(z, spec), spec), z):
            return CheckResult("partition round trip", False, f"mismatch at H={H} W={W} P={P}")
    return CheckResult("partition round trip", True, f"{cases} random cases bitwise equal")


def check_pooling_init(frames: int = 50, seed: int = 0) -> CheckResult:
    worst = 0.0
    for i in range(frames):
        k = (2, 4)[i % 2]
        z = random_latent((1, 1, 4 * k, 2 * k, 3), seed + i)
        got = depthwise_compress(z, DepthwiseKernel2D.average(k, 3))
        worst = max(worst, float(np.max(np.abs(got - average_pool(z, k)))))
    return CheckResult("pooling init", worst <= 1e-6, f"max abs diff {worst:.3g} over {frames} frames")


def check_gate_neutrality(D: int = 8, seed: int = 0) -> CheckResult:
    gate = FusionGate.init(D, make_rng(seed))
    za, zb = random_latent((1, 2, 4, 4, D), seed), random_latent((1, 2, 4, 4, D), seed + 1)
    ok = all(np.array_equal(fuse(za, zb, t, gate), (za + zb) / 2) for t in (0.0, 500.0, 999.0))
    return CheckResult("gate neutrality", ok, "zero output layer gives the exact mean")


def check_boundary_disjointness() -> CheckResult:
    for H in (20, 40, 60):
        for K in (2, 3, 4):
            rows_a, _ = interior_bounds(make_partition(H, H, K))
            rows_b, _ = interior_bounds(make_partition(H, H, K + 1))
            if rows_a & rows_b:
                return CheckResult("boundary disjointness", False, f"H={H} K={K} share {sorted(rows_a & rows_b)}")
    return CheckResult("boundary disjointness", True, "K and K+1 cuts never coincide")


def check_gradients(fault: bool = False) -> list[CheckResult]:
    out = []
    for name, loss, point in gradient_cases():
        ad, fd = gradients(loss, point)
        if fault:
            ad = [-g for g in ad]
        err = max_relative_error(ad, fd)
        out.append(CheckResult(f"gradient: {name}", err <= GRAD_TOL, f"max rel err {err:.3g}"))
    return out


def check_degenerate_equivalence(tolerance: float = 1e-5) -> CheckResult:
    from .oracle import assert_degenerate_equivalence

    rep = assert_degenerate_equivalence(0, (1, 2, 8, 8, 8), tolerance)
    return CheckResult("degenerate equivalence", rep.passed, f"max abs diff {rep.max_abs_diff:.3g}")


def check_speedup_law() -> CheckResult:
    from fractions import Fraction

    from .cost import speedup

    ok = speedup(4) == Fraction(1024, 84)
    return CheckResult("speedup law", ok, f"speedup(4) = {speedup(4)} ~ {float(speedup(4)):.4f}")


def run_all(fault: bool = False) -> list[CheckResult]:
    return [
        check_partition_roundtrip(),
        check_pooling_init(),
        check_gate_neutrality(),
        check_boundary_disjointness(),
        *check_gradients(fault),
        check_degenerate_equivalence(),
        check_speedup_law(),
    ]

