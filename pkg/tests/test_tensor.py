import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msnn import ops
from msnn.errors import InvalidArgumentError, PropagationError
from msnn.gradcheck import grad_check
from msnn.tensor import (Tensor, add, add_channel_bias, backward, concat, exp, log, matmul, mean, mul, neg,
                         node_mix, pad, relu, reshape, sub, tensor_sum, transpose)

from oracles import conv2d_loops, conv3d_loops, cross_entropy_direct, pool3d_loops


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


# -- conv3d ------------------------------------------------------------------

def test_conv3d_identity_kernel():
    x = Tensor(np.ones((1, 1, 3, 3, 3)))
    out = ops.conv3d(x, Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 3, 3, 3)
    np.testing.assert_array_equal(out.data, 1.0)


def test_conv3d_hand_sum():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 1, 2, 2))
    out = ops.conv3d(x, Tensor(np.ones((1, 1, 1, 2, 2))), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 1, 1, 1)
    assert out.item() == 10.0


def test_conv3d_matches_loop_oracle():
    rng = np.random.default_rng(1)
    x, k, b = rng.standard_normal((1, 2, 4, 5, 5)), rng.standard_normal((3, 2, 2, 3, 3)), rng.standard_normal(3)
    out = ops.conv3d(Tensor(x), Tensor(k), Tensor(b), stride=(1, 1, 1), padding=(0, 1, 1))
    ref = conv3d_loops(x, k, b, (1, 1, 1), (0, 1, 1))
    assert out.shape == (1, 3, 3, 5, 5)
    np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_conv3d_pool3d_property(data):
    ext = st.integers(1, 8)
    t, h, w = data.draw(ext), data.draw(ext), data.draw(ext)
    n, c, ko = data.draw(st.integers(1, 2)), data.draw(st.integers(1, 3)), data.draw(st.integers(1, 3))
    kt, kh, kw = data.draw(st.integers(1, t)), data.draw(st.integers(1, h)), data.draw(st.integers(1, w))
    stride = tuple(data.draw(st.integers(1, 3)) for _ in range(3))
    pad_ = tuple(data.draw(st.integers(0, 2)) for _ in range(3))
    rng = np.random.default_rng(data.draw(st.integers(0, 10_000)))
    x = rng.standard_normal((n, c, t, h, w))
    k = rng.standard_normal((ko, c, kt, kh, kw))
    b = rng.standard_normal(ko)
    out = ops.conv3d(Tensor(x), Tensor(k), Tensor(b), stride=stride, padding=pad_)
    np.testing.assert_allclose(out.data, conv3d_loops(x, k, b, stride, pad_), rtol=0, atol=1e-12)
    for mode in ("max", "avg"):
        got = ops.pool3d(Tensor(x), (kt, kh, kw), stride, mode=mode)
        np.testing.assert_allclose(got.data, pool3d_loops(x, (kt, kh, kw), stride, mode), rtol=0, atol=1e-12)


def test_conv3d_channel_mismatch_names_dimension():
    with pytest.raises(InvalidArgumentError, match="channel"):
        ops.conv3d(Tensor(np.zeros((1, 2, 3, 3, 3))), Tensor(np.zeros((1, 3, 1, 1, 1))))
    with pytest.raises(InvalidArgumentError, match="stride"):
        ops.conv3d(Tensor(np.zeros((1, 1, 3, 3, 3))), Tensor(np.zeros((1, 1, 1, 1, 1))), stride=0)


def test_conv3d_chunked_matches_unchunked(monkeypatch):
    rng = np.random.default_rng(3)
    x, k = rand(rng, 2, 2, 6, 5, 5), rand(rng, 3, 2, 3, 3, 3)
    full = ops.conv3d(x, k, stride=(2, 1, 1), padding=1)
    x.requires_grad = k.requires_grad = True
    out = ops.conv3d(x, k, stride=(2, 1, 1), padding=1)
    backward(out.sum())
    gx, gk = x.grad.copy(), k.grad.copy()
    monkeypatch.setattr(ops, "COL_BUDGET", 30)
    x.zero_grad(), k.zero_grad()
    small = ops.conv3d(x, k, stride=(2, 1, 1), padding=1)
    backward(small.sum())
    np.testing.assert_allclose(small.data, full.data, atol=1e-12)
    np.testing.assert_allclose(x.grad, gx, atol=1e-12)
    np.testing.assert_allclose(k.grad, gk, atol=1e-12)


# -- inflation ---------------------------------------------------------------

def test_inflate_scalar_kernel():
    out = ops.inflate_kernel(np.array([[[[2.0]]]]), 4)
    assert out.shape == (1, 1, 4, 1, 1)
    np.testing.assert_array_equal(out.data.ravel(), [0.5] * 4)


def test_inflate_identity_kernel():
    out = ops.inflate_kernel(np.array([[[[1.0, 0.0], [0.0, 1.0]]]]), 2)
    for s in range(2):
        np.testing.assert_array_equal(out.data[0, 0, s], [[0.5, 0.0], [0.0, 0.5]])


def test_inflate_depth_error():
    with pytest.raises(InvalidArgumentError):
        ops.inflate_kernel(np.ones((1, 1, 1, 1)), 0)


@pytest.mark.parametrize("seed", range(5))
def test_inflated_kernel_on_constant_video_equals_2d(seed):
    rng = np.random.default_rng(seed)
    k2 = rng.standard_normal((4, 3, 3, 3))
    frame = rng.standard_normal((1, 3, 7, 6))
    video = np.repeat(frame[:, :, None], 3, axis=2)
    out = ops.conv3d(Tensor(video), ops.inflate_kernel(k2, 3), padding=(0, 1, 1))
    ref = conv2d_loops(frame, k2, np.zeros(4), pad=(1, 1))
    assert out.shape == (1, 4, 1, 7, 6)
    np.testing.assert_allclose(out.data[:, :, 0], ref, rtol=0, atol=1e-12)


# -- pooling -----------------------------------------------------------------

def test_pool_small_cases():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 1, 2, 2))
    assert ops.pool3d(x, (1, 2, 2), mode="max").item() == 4.0
    assert ops.pool3d(x, (1, 2, 2), mode="avg").item() == 2.5


def test_pool_random_matches_oracle():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 3, 6, 8, 8))
    got = ops.pool3d(Tensor(x), (2, 2, 2), (2, 2, 2), mode="max")
    np.testing.assert_allclose(got.data, pool3d_loops(x, (2, 2, 2), (2, 2, 2), "max"), atol=1e-12)


def test_pool_window_too_large():
    with pytest.raises(InvalidArgumentError):
        ops.pool3d(Tensor(np.zeros((1, 1, 2, 2, 2))), (3, 1, 1))


# -- softmax / cross entropy -------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(ops.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    big = ops.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    p = ops.softmax(Tensor([1.0, 2.0, 3.0])).data
    e = [math.exp(v) for v in (1, 2, 3)]
    np.testing.assert_allclose(p, [v / sum(e) for v in e], atol=1e-15)
    np.testing.assert_allclose(p, [0.09003, 0.24473, 0.66524], atol=1e-5)


def test_softmax_nan_raises():
    with pytest.raises(PropagationError):
        ops.softmax(Tensor([0.0, np.nan]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=12))
def test_softmax_sums_to_one(values):
    p = ops.softmax(Tensor(values)).data
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all((p >= 0) & (p <= 1))


def test_cross_entropy_examples():
    assert ops.cross_entropy(Tensor([[0.0, 0.0]]), np.array([0])).item() == pytest.approx(math.log(2), abs=1e-12)
    assert ops.cross_entropy(Tensor([[10.0, -10.0]]), np.array([0])).item() < 1e-8
    rng = np.random.default_rng(11)
    logits = rng.standard_normal((4, 7)) * 3
    labels = rng.integers(0, 7, 4)
    got = ops.cross_entropy(Tensor(logits), labels).item()
    assert got == pytest.approx(cross_entropy_direct(logits.tolist(), labels.tolist()), abs=1e-12)


def test_cross_entropy_bad_label():
    with pytest.raises(InvalidArgumentError, match="label 3"):
        ops.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


# -- backward ----------------------------------------------------------------

def test_backward_sum_and_square():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, [1, 1, 1])
    x.zero_grad()
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, [2, 4, 6])


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(InvalidArgumentError):
        backward(x * 2.0)


def test_backward_deterministic_and_repeatable():
    rng = np.random.default_rng(5)
    x, k = rand(rng, 2, 2, 4, 5, 5), rand(rng, 3, 2, 3, 3, 3)
    x.requires_grad = k.requires_grad = True
    labels = np.array([1, 2])

    def loss():
        y = ops.pool3d(relu(ops.conv3d(x, k, padding=1)), (2, 2, 2), mode="max")
        return ops.cross_entropy(ops.global_avg_pool(y), labels)

    graph = loss()
    backward(graph)
    first = (x.grad.copy(), k.grad.copy())
    x.zero_grad(), k.zero_grad()
    backward(graph)
    assert np.array_equal(first[0], x.grad) and np.array_equal(first[1], k.grad)
    x.zero_grad(), k.zero_grad()
    backward(loss())
    assert np.array_equal(first[0], x.grad) and np.array_equal(first[1], k.grad)


# -- grad_check ----------------------------------------------------------------

def test_grad_check_sum():
    rng = np.random.default_rng(0)
    assert grad_check(lambda t: t.sum(), [rand(rng, 3, 4)], 1e-4) < 1e-10


def test_grad_check_cross_entropy_conv3d():
    rng = np.random.default_rng(2)
    x, k, b = rand(rng, 2, 2, 3, 4, 4), rand(rng, 3, 2, 2, 3, 3), rand(rng, 3)
    labels = np.array([0, 2])
    fn = lambda x, k, b: ops.cross_entropy(ops.global_avg_pool(ops.conv3d(x, k, b, padding=(0, 1, 1))), labels)
    assert grad_check(fn, [x, k, b], 1e-4) < 1e-4


def _planted(factor):
    from msnn.tensor import _make

    def fn(x):
        return _make(np.asarray((x.data ** 2).sum()), (x,), lambda g: (g * 2 * x.data * factor,))
    return fn


@pytest.mark.parametrize("factor, expected", [(2.0, 0.5), (1.5, 1 / 3)])
def test_grad_check_detects_planted_fault(factor, expected):
    x = Tensor(np.random.default_rng(4).standard_normal(5))
    assert grad_check(_planted(factor), [x], 1e-4) == pytest.approx(expected, abs=1e-6)


def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape))


OP_CASES = {
    "conv3d_strided": lambda rng: ([rand(rng, 1, 2, 5, 5, 4), rand(rng, 2, 2, 3, 2, 3), rand(rng, 2)],
                                   lambda x, k, b: ops.conv3d(x, k, b, stride=(2, 1, 2), padding=(1, 0, 1))),
    "maxpool": lambda rng: ([rand(rng, 1, 2, 4, 5, 5)],
                            lambda x: ops.pool3d(x, (2, 3, 3), (1, 2, 2), "max", padding=(0, 1, 1))),
    "avgpool": lambda rng: ([rand(rng, 1, 2, 4, 4, 4)], lambda x: ops.pool3d(x, (2, 2, 2), (2, 2, 2), "avg")),
    "softmax": lambda rng: ([rand(rng, 3, 5)], ops.softmax),
    "log_softmax": lambda rng: ([rand(rng, 3, 5)], ops.log_softmax),
    "batch_norm_train": lambda rng: ([rand(rng, 3, 4, 2, 3, 3), rand(rng, 4), rand(rng, 4)],
                                     lambda x, g, b: ops.batch_norm(x, g, b, np.zeros(4), np.ones(4), True)),
    "batch_norm_eval": lambda rng: ([rand(rng, 3, 4, 2, 3, 3), rand(rng, 4), rand(rng, 4)],
                                    lambda x, g, b: ops.batch_norm(x, g, b, np.full(4, 0.3), np.full(4, 2.0), False)),
    "linear": lambda rng: ([rand(rng, 3, 4), rand(rng, 5, 4), rand(rng, 5)], ops.linear),
    "global_avg_pool": lambda rng: ([rand(rng, 2, 3, 2, 3, 3)], ops.global_avg_pool),
    "inflate": lambda rng: ([rand(rng, 2, 3, 3, 3)], lambda k: ops.inflate_kernel(k, 3)),
    "pad_edge": lambda rng: ([rand(rng, 2, 3, 4)], lambda x: pad(x, [(0, 0), (2, 1), (1, 2)], "edge")),
    "pad_zero": lambda rng: ([rand(rng, 2, 3, 4)], lambda x: pad(x, [(1, 0), (0, 2), (1, 1)])),
    "concat": lambda rng: ([rand(rng, 2, 3), rand(rng, 2, 2)], lambda a, b: concat([a, b], axis=1)),
    "relu": lambda rng: ([rand(rng, 4, 5)], relu),
    "add": lambda rng: ([rand(rng, 3, 4), rand(rng, 3, 4)], add),
    "sub": lambda rng: ([rand(rng, 3, 4), rand(rng, 3, 4)], sub),
    "neg": lambda rng: ([rand(rng, 3, 4)], neg),
    "mul": lambda rng: ([rand(rng, 3, 4), rand(rng, 3, 4)], mul),
    "exp": lambda rng: ([rand(rng, 3, 4)], exp),
    "log": lambda rng: ([Tensor(rng.uniform(0.5, 2.0, (3, 4)))], log),
    "sum_axis": lambda rng: ([rand(rng, 3, 4, 2)], lambda a: tensor_sum(a, axis=1)),
    "mean_axis": lambda rng: ([rand(rng, 3, 4, 2)], lambda a: mean(a, axis=(0, 2))),
    "reshape": lambda rng: ([rand(rng, 3, 4)], lambda a: reshape(a, (2, 6))),
    "transpose": lambda rng: ([rand(rng, 2, 3, 4)], lambda a: transpose(a, (2, 0, 1))),
    "matmul": lambda rng: ([rand(rng, 3, 4), rand(rng, 4, 5)], matmul),
    "add_channel_bias": lambda rng: ([rand(rng, 2, 3, 4, 5), rand(rng, 3)], add_channel_bias),
    "node_mix": lambda rng: ([rand(rng, 2, 3, 4, 5)], (lambda a: lambda x: node_mix(x, a))(rng.random((5, 5)))),
    "cross_entropy": lambda rng: ([rand(rng, 4, 6)], lambda z: ops.cross_entropy(z, np.array([0, 5, 2, 2]))),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_passes_grad_check(name):
    rng = np.random.default_rng(zlib.crc32(name.encode()) % 1000)
    inputs, op = OP_CASES[name](rng)
    probe = None

    def fn(*args):
        nonlocal probe
        out = op(*args)
        if probe is None:
            probe = np.random.default_rng(99).standard_normal(out.shape)
        return (out * Tensor(probe)).sum()

    assert grad_check(fn, inputs, 1e-4) < 1e-4
