import numpy as np
import pytest

from gradcheck import check_op
from lfpfe import autodiff as ad

SHAPES = [(2, 3, 4, 2), (1, 2, 3, 3), (3, 1, 2, 4), (2, 2, 2, 2), (1, 4, 3, 2)]
TOL = 1e-4


def away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-1, 1, shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-9) * margin + x, x)


ELEMENTWISE = {
    "add": (lambda a, b: ad.add(a, b), 2),
    "sub": (lambda a, b: ad.sub(a, b), 2),
    "mul": (lambda a, b: ad.mul(a, b), 2),
    "scalar_mul": (lambda a: ad.scalar_mul(a, -1.7), 1),
    "sigmoid": (lambda a: ad.sigmoid(ad.scalar_mul(a, 3.0)), 1),
    "relu": (lambda a: ad.relu(a), 1),
    "neg_sugar": (lambda a, b: a * b - (-a) + 2.0 * b, 2),
}


@pytest.mark.parametrize("name", sorted(ELEMENTWISE))
@pytest.mark.parametrize("shape", SHAPES)
def test_elementwise_fd(name, shape, rng):
    op, arity = ELEMENTWISE[name]
    xs = [away_from_zero(rng, shape) for _ in range(arity)]
    assert check_op(op, xs, rng) <= TOL


@pytest.mark.parametrize("shape", SHAPES)
def test_broadcast_per_channel_fd(shape, rng):
    xs = [rng.standard_normal(shape), rng.standard_normal(shape[-1:])]
    assert check_op(ad.add, xs, rng) <= TOL
    assert check_op(ad.mul, xs, rng) <= TOL


@pytest.mark.parametrize("shape", SHAPES)
def test_log_and_clamp_fd(shape, rng):
    pos = rng.uniform(0.5, 2.0, shape)
    assert check_op(ad.log, [pos], rng) <= TOL
    x = away_from_zero(rng, shape) * 2
    x = np.where(np.abs(np.abs(x) - 1) < 0.05, x * 0.9, x)
    assert check_op(lambda a: ad.clamp(a, -1.0, 1.0), [x], rng) <= TOL


@pytest.mark.parametrize("shape", SHAPES)
def test_reductions_fd(shape, rng):
    x = rng.standard_normal(shape)
    assert check_op(lambda a: ad.sum(a), [x], rng) <= TOL
    assert check_op(lambda a: ad.mean(a, axis=(1, 2), keepdims=True), [x], rng) <= TOL
    assert check_op(lambda a: ad.mean(a, axis=-1), [x], rng) <= TOL
    assert check_op(lambda a: ad.max(a, axis=-1, keepdims=True), [x], rng) <= TOL
    assert check_op(lambda a: ad.max(a, axis=1), [x], rng) <= TOL


@pytest.mark.parametrize("shape", SHAPES)
def test_l1_loss_fd(shape, rng):
    a = rng.standard_normal(shape)
    b = a + away_from_zero(rng, shape)
    assert check_op(ad.l1_loss, [a, b], rng) <= TOL


@pytest.mark.parametrize("shape", SHAPES)
def test_shaping_fd(shape, rng):
    x = rng.standard_normal(shape)
    n = int(np.prod(shape))
    assert check_op(lambda a: ad.reshape(a, (n // shape[0], shape[0])), [x], rng) <= TOL
    assert check_op(lambda a: ad.permute(a, (3, 1, 0, 2)), [x], rng) <= TOL
    assert check_op(lambda a: ad.broadcast_to(ad.reshape(a, (1,) + shape), (2,) + shape), [x], rng) <= TOL
    assert check_op(lambda a: ad.index(a, (slice(None), 0)), [x], rng) <= TOL
    y = rng.standard_normal(shape[:-1] + (3,))
    assert check_op(lambda a, b: ad.concat([a, b, a], axis=-1), [x, y], rng) <= TOL


@pytest.mark.parametrize("shape", SHAPES)
def test_linear_fd(shape, rng):
    x = rng.standard_normal(shape)
    w = rng.standard_normal((shape[-1], 3))
    assert check_op(ad.linear, [x, w], rng) <= TOL


@pytest.mark.parametrize("axes", [(3, 4), (1, 2), (2, 4), (1, 3)])
@pytest.mark.parametrize("seed", range(5))
def test_conv_plane_fd(axes, seed):
    rng = np.random.default_rng(seed)
    shape = (1,) + tuple(rng.integers(1, 4, size=4)) + (2,)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((3, 2, 3, 3))
    assert check_op(lambda a, b: ad.conv_plane(a, b, axes), [x, w], rng) <= TOL


@pytest.mark.parametrize("seed", range(5))
def test_conv2d_fd(seed):
    rng = np.random.default_rng(seed)
    B, C, H, W = rng.integers(1, 3), rng.integers(1, 4), rng.integers(2, 6), rng.integers(2, 6)
    k = [1, 3, 5][seed % 3]
    x = rng.standard_normal((B, C, H, W))
    w = rng.standard_normal((2, C, k, k))
    bias = rng.standard_normal(2)
    assert check_op(lambda a, b, c: ad.conv2d(a, b, c), [x, w, bias], rng) <= TOL


def test_sigmoid_value_and_slope():
    x = ad.Tensor(np.zeros(1), requires_grad=True)
    y = ad.sigmoid(x)
    ad.sum(y).backward()
    assert y.data[0] == 0.5 and x.grad[0] == 0.25


def test_sigmoid_is_stable_for_large_inputs():
    y = ad.sigmoid(ad.Tensor(np.array([-1000.0, 1000.0], np.float32))).data
    assert np.all(np.isfinite(y)) and y[0] == 0.0 and y[1] == 1.0


def test_l1_of_equal_inputs():
    x = ad.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    loss = ad.l1_loss(x, x.detach())
    loss.backward()
    assert loss.item() == 0.0 and np.all(x.grad == 0)


def test_shape_errors():
    with pytest.raises(ValueError):
        ad.add(np.zeros((2, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ad.concat([np.zeros((2, 2)), np.zeros((2, 2))], axis=2)
    with pytest.raises(ValueError):
        ad.concat([np.zeros((2, 2)), np.zeros((3, 3))], axis=0)
    with pytest.raises(ValueError):
        ad.linear(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ad.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 3, 3, 3)))
    with pytest.raises(ValueError):
        ad.conv2d(np.zeros((1, 2, 4, 4)), np.zeros((1, 2, 2, 2)))
    with pytest.raises(ValueError):
        ad.l1_loss(np.zeros(3), np.zeros(4))
