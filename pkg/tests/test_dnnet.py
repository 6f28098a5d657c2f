import numpy as np
import pytest

from gradcheck import check_op, numeric_grad, rel_err
from lfpfe import autodiff as ad
from lfpfe.dnnet import ChannelAttention3D, DNNet, NoiseSuppressor, SpatialAttention
from lfpfe.lightfield import angular_average


def test_suppressor_channels_identical_at_init(rng):
    lf = rng.random((2, 3, 3, 5, 4)).astype(np.float32)
    out = NoiseSuppressor(9)(ad.Tensor(lf)).data
    assert out.shape == (2, 5, 4, 8)
    assert np.allclose(out, out[..., :1], atol=1e-6)
    assert np.allclose(out[0, ..., 0], angular_average(lf[0]), atol=1e-6)
    with pytest.raises(ValueError):
        NoiseSuppressor(4)(ad.Tensor(lf))


def test_suppressor_fixed_channel_has_no_parameters():
    sup = NoiseSuppressor(9)
    assert [p.shape for p in sup.parameters()] == [(9, 7)]


def test_spatial_attention_zero_weights_halves(rng):
    sa = SpatialAttention(rng)
    sa.conv.weight.data[...] = 0
    feat = ad.Tensor(rng.standard_normal((1, 2, 2, 5, 5, 3)).astype(np.float32))
    assert np.allclose(sa.attention_map(feat).data, 0.5)
    assert np.allclose(sa(feat).data, feat.data * 0.5)


def test_channel_attention_per_view_is_view_permutation_equivariant(rng):
    ca = ChannelAttention3D(6, 4, rng)
    per_view = rng.standard_normal((1, 2, 3, 4, 4, 3)).astype(np.float32)
    guide = rng.standard_normal((1, 4, 4, 3)).astype(np.float32)
    out = ca(ad.Tensor(per_view), ad.Tensor(guide)).data
    perm = per_view.reshape(1, 6, 4, 4, 3)[:, ::-1].reshape(per_view.shape)
    out_p = ca(ad.Tensor(perm), ad.Tensor(guide)).data
    assert np.allclose(out_p.reshape(1, 6, 4, 4, 6)[:, ::-1], out.reshape(1, 6, 4, 4, 6), atol=1e-6)


def test_channel_attention_joint_scales_shared_across_views(rng):
    ca = ChannelAttention3D(4, 2, rng, layout="joint")
    combined = ca.combine(ad.Tensor(rng.standard_normal((1, 2, 2, 3, 3, 2))), ad.Tensor(rng.standard_normal((1, 3, 3, 2))))
    assert ca.scales(combined).shape == (1, 1, 1, 1, 1, 4)
    with pytest.raises(ValueError):
        ChannelAttention3D(4, layout="spatial")


@pytest.mark.parametrize("layout", ["per_view", "joint"])
def test_channel_attention_gradients(layout, rng):
    ca = ChannelAttention3D(4, 2, rng, dtype=np.float64, layout=layout)
    a = rng.standard_normal((1, 2, 2, 3, 3, 2))
    b = rng.standard_normal((1, 3, 3, 2))
    assert check_op(ca, [a, b], rng, dtype=np.float64, h=1e-5) <= 1e-6


def test_suppressor_and_attention_gradients(rng):
    sup = NoiseSuppressor(4, dtype=np.float64)
    assert check_op(sup, [rng.random((1, 2, 2, 3, 3))], rng, dtype=np.float64, h=1e-5) <= 1e-6
    sa = SpatialAttention(rng, np.float64)
    # keep channel max well separated so the FD probe stays on one branch
    x = rng.standard_normal((1, 4, 4, 3)) + np.array([0.0, 0.0, 3.0])
    assert check_op(lambda t: sa.conv(t, (-3, -2)), [x[..., :2]], rng, dtype=np.float64, h=1e-5) <= 1e-6
    assert check_op(sa, [x], rng, dtype=np.float64, h=1e-5) <= 1e-5


def test_end_to_end_gradient_fd():
    rng = np.random.default_rng(11)
    net = DNNet(2, 2, stages=2, units=2, channels=4, rng=np.random.default_rng(11), dtype=np.float64)
    lf = rng.random((1, 2, 2, 8, 8))
    R = rng.standard_normal(lf.shape)
    x = ad.Tensor(lf, requires_grad=True)
    ad.sum(ad.mul(net(x), ad.Tensor(R))).backward()

    def f(a):
        return float((net(ad.Tensor(a)).data * R).sum())

    # a small random subset of entries keeps the FD probe cheap
    idx = [tuple(rng.integers(0, s) for s in lf.shape) for _ in range(12)]
    num, ana = [], []
    for i in idx:
        a = lf.copy()
        a[i] += 1e-5
        fp = f(a)
        a[i] -= 2e-5
        num.append((fp - f(a)) / 2e-5)
        ana.append(x.grad[i])
    assert rel_err(ana, num) <= 1e-3


def test_stage_structure(rng):
    net = DNNet(3, 3, stages=2, units=2, channels=4, rng=rng)
    lf = ad.Tensor(rng.random((1, 3, 3, 6, 6)).astype(np.float32))
    outs = net.stage_outputs(lf)
    assert len(outs) == 2 and outs[-1].shape == lf.shape
    assert np.array_equal(net(lf).data, outs[-1].data)
    one = DNNet(3, 3, stages=1, units=2, channels=4, rng=rng)
    assert one(lf).shape == lf.shape
    with pytest.raises(ValueError):
        DNNet(3, 3, stages=0)


def test_pruned_dnnet_matches_hard_template(rng):
    net = DNNet(2, 2, stages=2, units=3, channels=4, rng=np.random.default_rng(2))
    for g in net.gate_banks():
        for p in g.parameters():
            p.data[...] = rng.uniform(0, 1, p.shape)
    net.set_gate_mode("hard")
    pruned = net.prune()
    lf = ad.Tensor(rng.random((1, 2, 2, 6, 6)).astype(np.float32))
    assert np.array_equal(net(lf).data, pruned(lf).data)
    assert pruned.num_weights() <= net.num_weights()


def test_gate_parameters_are_not_weights():
    net = DNNet(2, 2, stages=1, units=2, channels=4)
    gate_ids = {id(p) for g in net.gate_banks() for p in g.parameters()}
    assert gate_ids and not gate_ids & {id(p) for p in net.weight_parameters()}
