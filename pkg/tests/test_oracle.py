import math

import numpy as np
import pytest

from hierattn._validation import ResourceLimitError
from hierattn.block import BlockConfig, block_forward, init_model, local_branch
from hierattn.nn import bilinear_resample, layer_norm, silu
from hierattn.oracle import (
    assert_degenerate_equivalence,
    brute_force_resample,
    degenerate_setup,
    full_attention_block,
)


def test_default_run_passes():
    rep = assert_degenerate_equivalence(0, (1, 2, 8, 8, 8), 1e-5)
    assert rep.passed and rep.max_abs_diff <= 1e-5


@pytest.mark.parametrize("seed,heads", [(1, 1), (2, 2), (3, 4)])
def test_other_seeds_and_heads(seed, heads):
    assert assert_degenerate_equivalence(seed, (1, 2, 4, 6, 8), 1e-5, t=17.0, heads=heads).passed


def test_perturbation_is_detected():
    def bump(p):
        p.global_decompress.bias[:] += 1e-2

    rep = assert_degenerate_equivalence(0, (1, 2, 8, 8, 8), 1e-5, perturb=bump)
    assert not rep.passed and rep.max_abs_diff > 1e-5


def test_lora_perturbation_is_detected():
    def bump(p):
        a, b = p.hier_lora.factors["wv"]
        p.hier_lora.factors["wv"] = (a, b + 1e-2)

    assert not assert_degenerate_equivalence(0, (1, 2, 8, 8, 8), 1e-5, perturb=bump).passed


def test_infinite_tolerance():
    def wreck(p):
        p.global_decompress.bias[:] += 1e3

    assert assert_degenerate_equivalence(0, (1, 1, 4, 4, 8), math.inf, perturb=wreck).passed


def test_reports_are_deterministic():
    a = assert_degenerate_equivalence(4, (1, 2, 4, 4, 8), 1e-5).as_dict()
    assert a == assert_degenerate_equivalence(4, (1, 2, 4, 4, 8), 1e-5).as_dict()


def test_token_guard():
    with pytest.raises(ResourceLimitError):
        assert_degenerate_equivalence(0, (1, 2, 128, 128, 8), 1e-5)
    z, cfg, p = degenerate_setup(0, (1, 1, 8, 8, 8))
    with pytest.raises(ResourceLimitError):
        full_attention_block(z, 0.0, p, max_tokens=63)


def test_oracle_equals_single_window_local_branch():
    z, cfg, p = degenerate_setup(2, (1, 3, 4, 4, 8))
    assert np.array_equal(full_attention_block(z, 0.0, p), local_branch(z, cfg, p))


def test_single_token():
    z, cfg, p = degenerate_setup(0, (1, 1, 1, 1, 8))
    eye = np.eye(8, dtype=np.float32)
    p.weights.wq = p.weights.wk = p.weights.wv = p.weights.wo = eye
    w, n = p.weights, p.norm
    x = z + layer_norm(z, n.g1, n.b1)
    h = layer_norm(x, n.g2, n.b2)
    expect = x + silu(h @ w.w1 + w.b1) @ w.w2 + w.b2
    assert np.allclose(full_attention_block(z, 0.0, p), expect, atol=1e-6)


def test_site_permutation_equivariance():
    z, cfg, p = degenerate_setup(1, (1, 2, 3, 4, 8))
    rng = np.random.default_rng(0)
    perm = rng.permutation(2 * 3 * 4)
    flat = z.reshape(1, -1, 8)
    zp = flat[:, perm].reshape(z.shape)
    out = full_attention_block(z, 0.0, p).reshape(1, -1, 8)
    outp = full_attention_block(zp, 0.0, p).reshape(1, -1, 8)
    assert np.allclose(outp, out[:, perm], atol=1e-6)


def test_degenerate_block_matches_oracle_directly():
    z, cfg, p = degenerate_setup(5, (2, 2, 4, 4, 8))
    assert cfg.local_parts == 1 and cfg.hier_parts == 1
    assert np.max(np.abs(block_forward(z, 999.0, cfg, p) - full_attention_block(z, 999.0, p))) <= 1e-5


class TestBruteForceResample:
    def test_row(self):
        assert np.allclose(brute_force_resample(np.array([[0.0, 2.0]]), 1, 4), [[0, 0.5, 1.5, 2]])

    def test_constant(self):
        assert np.allclose(brute_force_resample(np.full((3, 5), 1.5), 7, 2), 1.5)

    @pytest.mark.parametrize("seed", range(50))
    def test_agrees_with_vectorised(self, seed):
        rng = np.random.default_rng(100 + seed)
        f = rng.normal(size=(int(rng.integers(1, 10)), int(rng.integers(1, 10))))
        Ho, Wo = (int(x) for x in rng.integers(1, 14, 2))
        got = bilinear_resample(f.reshape(1, 1, *f.shape, 1), Ho, Wo)[0, 0, :, :, 0]
        assert np.max(np.abs(got - brute_force_resample(f, Ho, Wo))) <= 1e-6


def test_block_config_of_setup():
    _, cfg, _ = degenerate_setup(0, (1, 1, 4, 4, 8))
    assert cfg == BlockConfig(K=1, D=8, r=2, k=1, hier_factor=1)
    assert len(init_model([cfg], 0)) == 1
