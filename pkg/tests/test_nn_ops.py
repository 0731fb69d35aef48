import numpy as np
import pytest

from oracles import op_gradient_error
from sdmseg.errors import DomainError
from sdmseg.nn import (
    Tensor,
    concat_channels,
    conv3d,
    group_norm,
    leaky_relu,
    no_grad,
    sigmoid,
    tanh,
    trilinear_upsample,
)


def rand(rng, *shape):
    return rng.standard_normal(shape)


def test_identity_kernel():
    rng = np.random.default_rng(0)
    x = rand(rng, 1, 2, 4, 5, 3)
    k = np.zeros((2, 2, 3, 3, 3))
    k[0, 0, 1, 1, 1] = k[1, 1, 1, 1, 1] = 1
    assert np.array_equal(conv3d(Tensor(x), Tensor(k)).data, x)


def test_ones_kernel_stride_two():
    out = conv3d(Tensor(np.ones((1, 1, 4, 4, 4))), Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.array([0.5])), stride=2)
    assert out.shape == (1, 1, 2, 2, 2)
    assert np.all(out.data == 8.5)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rand(rng, 1, 2, 4, 3, 5)
    k = rand(rng, 3, 2, 3, 3, 3)
    out = conv3d(Tensor(x), Tensor(k)).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    ref = np.zeros_like(out)
    for o in range(3):
        for i, j, l in np.ndindex(4, 3, 5):
            ref[0, o, i, j, l] = (xp[0, :, i:i + 3, j:j + 3, l:l + 3] * k[o]).sum()
    assert np.allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_shape_errors():
    x = Tensor(np.zeros((1, 2, 4, 4, 4)))
    with pytest.raises(DomainError):
        conv3d(x, Tensor(np.zeros((1, 3, 3, 3, 3))))
    with pytest.raises(DomainError):
        conv3d(Tensor(np.zeros((1, 1, 5, 4, 4))), Tensor(np.zeros((1, 1, 2, 2, 2))), stride=2)


def test_conv_chunked_equals_single_slab(monkeypatch):
    import sdmseg.nn.ops as ops

    rng = np.random.default_rng(2)
    x = Tensor(rand(rng, 1, 2, 6, 4, 4), requires_grad=True)
    k = Tensor(rand(rng, 2, 2, 3, 3, 3), requires_grad=True)
    w = rand(rng, 1, 2, 6, 4, 4)
    out = conv3d(x, k)
    (out * Tensor(w)).sum().backward()
    ref = (out.data.copy(), x.grad.copy(), k.grad.copy())
    monkeypatch.setattr(ops, "_CHUNK_BYTES", 1)
    x.zero_grad(); k.zero_grad()
    out2 = conv3d(x, k)
    (out2 * Tensor(w)).sum().backward()
    assert np.allclose(out2.data, ref[0], rtol=1e-13, atol=1e-13)
    assert np.allclose(x.grad, ref[1], rtol=1e-13, atol=1e-13)
    assert np.allclose(k.grad, ref[2], rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    args = [rand(rng, 1, 2, 4, 3, 4), rand(rng, 3, 2, 3, 3, 3), rand(rng, 3)]
    assert op_gradient_error(lambda x, k, b: conv3d(x, k, b), args, seed) < 1e-4
    args = [rand(rng, 1, 2, 4, 2, 4), rand(rng, 2, 2, 2, 2, 2), rand(rng, 2)]
    assert op_gradient_error(lambda x, k, b: conv3d(x, k, b, stride=2), args, seed) < 1e-4


def test_group_norm_statistics():
    rng = np.random.default_rng(3)
    x = 3 + 2 * rand(rng, 2, 4, 3, 3, 3)
    out = group_norm(Tensor(x), 2, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    g = out.reshape(2, 2, -1)
    assert np.allclose(g.mean(axis=2), 0, atol=1e-12)
    assert np.allclose(g.var(axis=2), 1, atol=1e-4)
    inst = group_norm(Tensor(x), 4, Tensor(np.ones(4)), Tensor(np.zeros(4))).data
    assert np.allclose(inst.reshape(2, 4, -1).mean(axis=2), 0, atol=1e-12)


def test_group_norm_indivisible():
    with pytest.raises(DomainError):
        group_norm(Tensor(np.zeros((1, 3, 2, 2, 2))), 2, Tensor(np.ones(3)), Tensor(np.zeros(3)))


@pytest.mark.parametrize("seed", range(3))
def test_group_norm_gradients(seed):
    rng = np.random.default_rng(seed)
    args = [rand(rng, 2, 4, 2, 3, 2), 1 + 0.1 * rand(rng, 4), rand(rng, 4)]
    assert op_gradient_error(lambda x, s, b: group_norm(x, 2, s, b), args, seed) < 1e-4


def test_activation_values():
    x = Tensor(np.array([-1.0, 0.0, 2.0]))
    assert leaky_relu(x).data.tolist() == [-0.01, 0.0, 2.0]
    t = tanh(Tensor(np.linspace(-30, 30, 7))).data
    assert t[3] == 0 and np.all(np.abs(t) <= 1)
    s = sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert s.tolist() == [0.0, 0.5, 1.0]


@pytest.mark.parametrize("seed", range(3))
def test_activation_gradients(seed):
    rng = np.random.default_rng(seed)
    x = rand(rng, 1, 2, 3, 3, 3)
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the leaky-relu kink
    for op in (leaky_relu, tanh, sigmoid):
        assert op_gradient_error(op, [x], seed) < 1e-4


def test_upsample_constant_and_mean():
    out = trilinear_upsample(Tensor(np.full((1, 1, 2, 3, 2), 4.0))).data
    assert out.shape == (1, 1, 4, 6, 4) and np.all(out == 4.0)
    rng = np.random.default_rng(5)
    x = rand(rng, 1, 2, 3, 4, 2)
    up = trilinear_upsample(Tensor(x)).data
    assert up.mean() == pytest.approx(x.mean(), abs=0.5)
    # interior samples follow the 0.75 / 0.25 half-pixel weights
    line = trilinear_upsample(Tensor(np.arange(4.0).reshape(1, 1, 4, 1, 1))).data[0, 0, :, 0, 0]
    assert line.tolist() == [0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]


def test_upsample_backward_is_transpose():
    rng = np.random.default_rng(6)
    x = rand(rng, 1, 2, 3, 2, 4)
    g = rand(rng, 1, 2, 6, 4, 8)
    t = Tensor(x, requires_grad=True)
    trilinear_upsample(t).backward(g)
    lhs = (trilinear_upsample(Tensor(x)).data * g).sum()
    assert lhs == pytest.approx((x * t.grad).sum(), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_upsample_and_concat_gradients(seed):
    rng = np.random.default_rng(seed)
    assert op_gradient_error(trilinear_upsample, [rand(rng, 1, 2, 2, 3, 2)], seed) < 1e-4
    args = [rand(rng, 1, 2, 2, 2, 2), rand(rng, 1, 3, 2, 2, 2)]
    assert op_gradient_error(concat_channels, args, seed) < 1e-4
    assert concat_channels(*[Tensor(a) for a in args]).shape == (1, 5, 2, 2, 2)


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones((1, 1, 2, 2, 2)), requires_grad=True)
    with no_grad():
        y = tanh(x)
    assert not y.requires_grad


def test_shared_node_accumulates():
    x = Tensor(np.array([2.0, 3.0]), requires_grad=True)
    y = x * x + x
    y.sum().backward()
    assert x.grad.tolist() == [5.0, 7.0]
