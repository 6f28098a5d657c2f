import numpy as np
import pytest

from gradcheck import numeric_grad, rel_err
from lfpfe import autodiff as ad
from lfpfe.pfe import (
    PATTERNS, PLANE_AXES, ArchitectureMask, GateBank, PFEModule, architecture_report,
    derive_map_architecture, fold, gumbel_mask, set_temperature, unfold,
)


def feats(rng, shape=(2, 3, 3, 5, 4, 4), dtype=np.float32):
    return ad.Tensor(rng.standard_normal(shape).astype(dtype))


def random_gates(module, rng, lo=0.0, hi=1.0):
    for p in module.gates.parameters():
        p.data[...] = rng.uniform(lo, hi, p.shape)


# ------------------------------------------------------------------ folding

@pytest.mark.parametrize("pattern", PATTERNS)
def test_fold_unfold_round_trip(pattern, rng):
    x = rng.standard_normal((2, 3, 4, 5, 6, 3)).astype(np.float32)
    y = fold(x, pattern)
    assert y.ndim == 4 and y.shape[1] == 3
    assert np.array_equal(unfold(y, pattern, x.shape), x)


@pytest.mark.parametrize("pattern", PATTERNS)
def test_pattern_conv_equals_folded_conv2d(pattern, rng):
    x = rng.standard_normal((1, 3, 2, 4, 5, 3))
    w = rng.standard_normal((2, 3, 3, 3))
    direct = ad.conv_plane(x, w, PLANE_AXES[pattern]).data
    folded = ad.conv2d(fold(x, pattern), w).data
    assert np.allclose(direct, unfold(folded, pattern, x.shape[:-1] + (2,)), atol=1e-12)


# ------------------------------------------------------------------ gumbel

def test_gumbel_symmetric_noise_cancels():
    r = np.full(1, 0.3)
    for tau in (0.05, 1.0, 5.0):
        assert gumbel_mask(np.array([0.5]), tau, noise=(r, r)).data[0] == pytest.approx(0.5, abs=1e-7)
    assert gumbel_mask(np.array([0.9]), 0.05, noise=(r, r)).data[0] >= 0.999
    assert gumbel_mask(np.array([0.1]), 0.05, noise=(r, r)).data[0] <= 0.001


def test_gumbel_limit_is_bernoulli_p():
    rng = np.random.default_rng(0)
    s = gumbel_mask(np.full(10**5, 0.7), 0.05, rng).data
    assert 0.68 <= (s > 0.5).mean() <= 0.72


def test_gumbel_clamps_extreme_probabilities():
    rng = np.random.default_rng(1)
    s = gumbel_mask(np.array([0.0, 1.0, -0.5, 1.5]), 0.5, rng).data
    assert np.all(np.isfinite(s)) and np.all((s >= 0) & (s <= 1))


def test_gumbel_sharpness_ordering():
    rng = np.random.default_rng(2)
    p = np.full(10**5, 0.5)
    sharp = gumbel_mask(p, 0.05, rng).data
    soft = gumbel_mask(p, 5.0, rng).data
    assert ((sharp > 0.2) & (sharp < 0.8)).mean() < 0.05
    assert ((soft > 0.2) & (soft < 0.8)).mean() > 0.5


def test_gumbel_gradient_matches_fd():
    rng = np.random.default_rng(3)
    r1, r2 = rng.random(5), rng.random(5)
    p0 = rng.uniform(0.2, 0.8, 5)
    R = rng.standard_normal(5)
    p = ad.Tensor(p0.astype(np.float32), requires_grad=True)
    ad.sum(ad.mul(gumbel_mask(p, 0.7, noise=(r1, r2)), ad.Tensor(R.astype(np.float32)))).backward()

    def f(q):
        return float((gumbel_mask(ad.Tensor(q), 0.7, noise=(r1, r2)).data * R).sum())

    assert rel_err(p.grad, numeric_grad(f, [p0], 0, h=1e-4)) <= 1e-3


def test_temperature_schedule():
    assert set_temperature(0, 100) == 1.0
    assert set_temperature(40, 100) == pytest.approx(0.05)
    assert set_temperature(20, 100) == pytest.approx(0.525)
    assert set_temperature(90, 100) == pytest.approx(0.05)
    assert set_temperature(0.2, 1) == pytest.approx(0.525)


# ------------------------------------------------------------------ gates

def test_gate_bank_layout_and_clip():
    g = GateBank(4, np.random.default_rng(0))
    assert [g.u(j).shape for j in range(1, 5)] == [(1,), (2,), (3,), (4,)]
    assert all(g.v(j).shape == (4,) for j in range(1, 5))
    vals = np.concatenate([p.data for p in g.parameters()])
    assert vals.min() >= 0.3 and vals.max() <= 0.7
    g.u(2).data[...] = [-0.3, 1.4]
    g.clip()
    assert g.u(2).data.tolist() == [0.0, 1.0]
    with pytest.raises(ValueError):
        g.set_mode("soft")


def test_gate_masks_by_mode():
    g = GateBank(2, np.random.default_rng(0))
    assert g.masks(2, 1.0, None) == (None, None)
    g.u(2).data[...] = [0.5, 0.49]
    g.set_mode("hard")
    u, v = g.masks(2, 1.0, None)
    assert u.data.tolist() == [1.0, 0.0] and set(v.data.tolist()) <= {0.0, 1.0}
    g.set_mode("sampled")
    u, v = g.masks(2, 0.5, np.random.default_rng(1))
    assert u.requires_grad and np.all((u.data > 0) & (u.data < 1))


def test_derive_thresholds_with_ties_kept():
    g = GateBank(3, np.random.default_rng(0))
    g.u(3).data[...] = [0.9, 0.1, 0.5]
    arch = derive_map_architecture(g)
    assert arch.u[2] == [1, 0, 1]
    g.fill(1.0)
    assert derive_map_architecture(g).is_template()


def test_liveness_prunes_dead_and_unused_units():
    # unit 2 has no patterns: it outputs zeros, so unit 3 only sees H0 and H1 feeds nothing
    arch = ArchitectureMask(u=[[1], [1, 1], [1, 1, 1]], v=[[1, 0, 0, 0], [0, 0, 0, 0], [0, 1, 0, 0]])
    assert arch.live == [True, False, True]
    assert arch.sources == [[0], [], [0, 1]]
    # unit 1 feeds nothing downstream when unit 2 ignores it
    arch = ArchitectureMask(u=[[1], [1, 0]], v=[[1, 1, 1, 1], [1, 0, 0, 0]])
    assert arch.live == [False, True] and arch.sources == [[], [0]]
    round_trip = ArchitectureMask.from_dict(arch.to_dict())
    assert round_trip.live == arch.live and round_trip.patterns == arch.patterns
    text = architecture_report(arch, 0)
    assert "unit 1: pruned" in text and "patterns [spa]" in text and "sources [H0]" in text


# ------------------------------------------------------------------ module

def test_template_j1_matches_hand_pipeline(rng):
    mod = PFEModule(2, 4, 1, np.random.default_rng(0))
    x = feats(rng, (1, 3, 3, 4, 5, 2))
    h0 = ad.conv_plane(x, mod.input_embed.weight, (3, 4))
    agg = ad.relu(ad.linear(h0, mod.aggregators[0].src0.weight.data[:, :, 0, 0].T))
    unit = mod.blocks[0]
    fused = None
    for p in PATTERNS:
        o = ad.conv_plane(agg, getattr(unit, p).weight, PLANE_AXES[p])
        y = ad.linear(o, getattr(unit, f"fuse_{p}").weight.data[:, :, 0, 0].T)
        fused = y if fused is None else ad.add(fused, y)
    h1 = ad.conv_plane(ad.relu(fused), unit.post.weight, (3, 4))
    out = ad.linear(h1, mod.head.weight.data[:, :, 0, 0].T).data[..., 0]
    assert np.allclose(mod(x).data, out, rtol=1e-5, atol=1e-6)


def test_zero_input_gives_zero_output():
    mod = PFEModule(3, 4, 3, np.random.default_rng(0))
    assert np.all(mod(ad.Tensor(np.zeros((1, 3, 3, 4, 4, 3), np.float32))).data == 0)


def test_output_shape_and_singleton_angular(rng):
    mod = PFEModule(2, 4, 2, np.random.default_rng(0))
    y = mod(feats(rng, (2, 1, 1, 6, 5, 2)))
    assert y.shape == (2, 1, 1, 6, 5) and np.all(np.isfinite(y.data))


def test_all_patterns_masked_unit_outputs_zero(rng):
    mod = PFEModule(2, 4, 2, np.random.default_rng(0))
    h = feats(rng, (1, 3, 3, 4, 4, 4))
    out = mod.blocks[0](h, ad.Tensor(np.zeros(4, np.float32)))
    assert np.all(out.data == 0)


def test_aggregate_single_source(rng):
    mod = PFEModule(2, 4, 3, np.random.default_rng(0))
    mod.gates.set_mode("hard")
    mod.gates.u(3).data[...] = [1.0, 0.0, 0.0]
    fs = [feats(rng, (1, 2, 2, 3, 3, 4)) for _ in range(3)]
    got = mod.aggregate(3, fs, 1.0, None).data
    ref = np.maximum(fs[0].data @ mod.aggregators[2].src0.weight.data[:, :, 0, 0].T, 0)
    assert np.array_equal(got, ref)


def test_masked_feature_gets_exact_zero_grad(rng):
    mod = PFEModule(2, 4, 3, np.random.default_rng(0))
    mod.gates.set_mode("hard")
    mod.gates.u(3).data[...] = [1.0, 0.0, 1.0]
    fs = [ad.Tensor(rng.standard_normal((1, 2, 2, 3, 3, 4)).astype(np.float32), requires_grad=True)
          for _ in range(3)]
    ad.sum(mod.aggregate(3, fs, 1.0, None)).backward()
    assert np.all(fs[1].grad == 0) and np.any(fs[0].grad != 0)


def test_masked_feature_perturbation_has_no_effect(rng):
    mod = PFEModule(2, 4, 3, np.random.default_rng(0))
    mod.gates.set_mode("hard")
    mod.gates.fill(1.0)
    mod.gates.u(3).data[...] = [1.0, 0.0, 1.0]
    fs = [feats(rng, (1, 2, 2, 3, 3, 4)) for _ in range(3)]
    a = mod.aggregate(3, fs, 1.0, None).data
    fs[1] = ad.Tensor(fs[1].data + 10.0)
    assert np.array_equal(a, mod.aggregate(3, fs, 1.0, None).data)


def test_template_equals_hard_all_ones(rng):
    mod = PFEModule(3, 4, 3, np.random.default_rng(0))
    x = feats(rng, (2, 3, 3, 5, 4, 3))
    a = mod(x).data
    mod.gates.fill(1.0)
    mod.gates.set_mode("hard")
    assert np.array_equal(a, mod(x).data)


@pytest.mark.parametrize("seed", range(10))
def test_pruned_equals_hard_masked_template(seed):
    rng = np.random.default_rng(seed)
    mod = PFEModule(3, 4, 4, np.random.default_rng(seed))
    random_gates(mod, rng)
    mod.gates.set_mode("hard")
    arch = mod.derive()
    pruned = mod.prune(arch)
    x = feats(rng, (1, 3, 3, 4, 5, 3))
    assert np.array_equal(mod(x).data, pruned(x).data)
    assert pruned.num_weights() <= mod.num_weights()
    if not arch.is_template():
        assert pruned.num_weights() < mod.num_weights()


def test_all_gates_off_prunes_to_nothing(rng):
    mod = PFEModule(3, 4, 2, np.random.default_rng(0))
    mod.gates.fill(0.0)
    mod.gates.set_mode("hard")
    pruned = mod.prune()
    x = feats(rng, (1, 2, 2, 3, 3, 3))
    assert pruned.num_weights() == 0
    assert np.array_equal(mod(x).data, pruned(x).data) and np.all(pruned(x).data == 0)


def test_prune_of_full_probabilities_keeps_everything():
    mod = PFEModule(3, 4, 3, np.random.default_rng(0))
    mod.gates.fill(1.0)
    assert mod.prune().num_weights() == mod.num_weights()
    with pytest.raises(ValueError):
        mod.prune().prune()


def test_template_mode_leaves_gates_without_grad(rng):
    mod = PFEModule(2, 4, 2, np.random.default_rng(0))
    ad.mean(mod(feats(rng, (1, 2, 2, 3, 3, 2)))).backward()
    assert all(p.grad is None or not np.any(p.grad) for p in mod.gates.parameters())
    assert all(p.grad is not None for p in mod.weight_parameters())


def test_sampled_mode_reaches_gates(rng):
    mod = PFEModule(2, 4, 2, np.random.default_rng(0))
    mod.gates.set_mode("sampled")
    ad.mean(mod(feats(rng, (1, 2, 2, 3, 3, 2)), 0.5, np.random.default_rng(1))).backward()
    assert all(p.grad is not None and np.any(p.grad) for p in mod.gates.parameters())


def test_sampled_forward_gradient_wrt_probabilities_fd():
    """d(out)/d(p) at fixed draws, through the whole module, in float64."""
    rng = np.random.default_rng(7)
    mod = PFEModule(2, 3, 2, np.random.default_rng(7), dtype=np.float64)
    mod.gates.set_mode("sampled")
    x = rng.standard_normal((1, 2, 2, 3, 3, 2))
    R = rng.standard_normal((1, 2, 2, 3, 3))
    p = mod.gates.v(2)
    p0 = p.data.copy()

    def f(q):
        p.data = q
        return float((mod(ad.Tensor(x), 0.8, np.random.default_rng(3)).data * R).sum())

    mod.zero_grad()
    p.data = p0.copy()
    ad.sum(ad.mul(mod(ad.Tensor(x), 0.8, np.random.default_rng(3)), ad.Tensor(R))).backward()
    ana = p.grad.copy()
    num = numeric_grad(f, [p0], 0, h=1e-5)
    p.data = p0
    assert rel_err(ana, num) <= 1e-3


def test_parameter_count_bookkeeping():
    mod = PFEModule(1, 32, 1, np.random.default_rng(0))
    assert mod.input_embed.weight.size == 288
    C, J = 8, 3
    mod = PFEModule(2, C, J, np.random.default_rng(0))
    expected = 9 * 2 * C + C * C * (1 + 2 + 3) + J * (4 * 9 * C * C + 4 * C * C + 9 * C * C) + C
    assert mod.num_weights() == expected
