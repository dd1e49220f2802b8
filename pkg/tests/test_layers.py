"""Tests for convolution, normalization, and activation layers."""

import numpy as np
import pytest

from relightkit.gradcheck import grad_check
from relightkit.layers import (
    _same_pads,
    conv2d,
    conv2d_transpose,
    group_norm,
    prelu,
    rotate_longitude,
    sigmoid,
    softplus,
)
from relightkit.tensor import Tape, Tensor, tsum


def test_same_pads_output_size_law():
    for size in range(1, 8):
        for k in (1, 2, 3, 5):
            for stride in (1, 2, 3):
                out, before, after = _same_pads(size, k, stride)
                assert out == -(-size // stride)  # ceil division
                total = max((out - 1) * stride + k - size, 0)
                assert before == total // 2
                assert after == total - total // 2


def test_conv2d_ones_stride2_frozen():
    # 4x4 ones, 3x3 ones kernel, stride 2, same padding. Each output counts
    # how many taps land inside the image: full 3x3 at the top-left window,
    # clipped windows toward the bottom-right where the padding sits.
    x = Tensor(np.ones((4, 4, 1), dtype=np.float32))
    k = Tensor(np.ones((3, 3, 1, 1), dtype=np.float32))
    out = conv2d(x, k, stride=2)
    np.testing.assert_allclose(out.data[:, :, 0], [[9.0, 6.0], [6.0, 4.0]])


def test_conv2d_stride1_matches_brute_force():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((6, 5, 2))
    k = rng.standard_normal((3, 3, 2, 4))
    out = conv2d(Tensor(x), Tensor(k), stride=1).data
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    expected = np.zeros((6, 5, 4))
    for r in range(6):
        for c in range(5):
            window = xp[r : r + 3, c : c + 3, :]
            expected[r, c] = np.tensordot(window, k, axes=([0, 1, 2], [0, 1, 2]))
    np.testing.assert_allclose(out, expected, rtol=1e-5)


def test_conv_transpose_is_adjoint():
    # <conv(x), y> == <x, conv_T(y)> holds exactly when the spatial size is
    # divisible by the stride.
    rng = np.random.default_rng(3)
    for stride, size in ((1, 5), (2, 6)):
        x = rng.standard_normal((size, size, 3))
        k = rng.standard_normal((3, 3, 3, 2))
        y = rng.standard_normal((-(-size // stride), -(-size // stride), 2))
        cx = conv2d(Tensor(x), Tensor(k), stride=stride).data
        cty = conv2d_transpose(Tensor(y), Tensor(k), stride=stride).data
        lhs = np.vdot(cx, y)
        rhs = np.vdot(x, cty)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_conv_transpose_upsamples():
    x = Tensor(np.ones((3, 3, 4), dtype=np.float32))
    k = Tensor(np.ones((3, 3, 2, 4), dtype=np.float32) * 0.1)
    out = conv2d_transpose(x, k, stride=2)
    assert out.shape == (6, 6, 2)


def test_conv_shape_validation():
    x = Tensor(np.ones((4, 4, 2)))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.ones((3, 3, 5, 1))))
    with pytest.raises(ValueError):
        conv2d(x, Tensor(np.ones((3, 3, 2, 1))), bias=Tensor(np.ones(2)))
    with pytest.raises(ValueError):
        conv2d(Tensor(np.ones((4, 4))), Tensor(np.ones((3, 3, 1, 1))))


def test_group_norm_normalizes_groups():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((5, 7, 6)) * 4.0 + 2.5
    gamma = Tensor(np.ones(6))
    beta = Tensor(np.zeros(6))
    out = group_norm(Tensor(x), 3, gamma, beta).data
    grouped = out.reshape(5, 7, 3, 2)
    means = grouped.mean(axis=(0, 1, 3))
    stds = grouped.std(axis=(0, 1, 3))
    np.testing.assert_allclose(means, 0.0, atol=1e-7)
    np.testing.assert_allclose(stds, 1.0, atol=1e-4)


def test_group_norm_affine_and_group_count():
    x = Tensor(np.random.default_rng(0).standard_normal((4, 4, 4)))
    gamma = Tensor(np.full(4, 2.0))
    beta = Tensor(np.full(4, -1.0))
    # one group and one-channel-per-group both legal
    for groups in (1, 4):
        out = group_norm(x, groups, gamma, beta).data
        assert out.shape == (4, 4, 4)
        np.testing.assert_allclose(out.mean(), -1.0, atol=1e-6)
    with pytest.raises(ValueError):
        group_norm(x, 3, gamma, beta)


def test_prelu_frozen_values():
    x = Tensor(np.array([[[-1.0, 2.0]]]))
    alpha = Tensor(np.array([0.25, 0.5]))
    out = prelu(x, alpha)
    np.testing.assert_allclose(out.data, [[[-0.25, 2.0]]])


def test_softplus_endpoints():
    x = Tensor(np.array([0.0, 30.0, -30.0]))
    out = softplus(x).data
    np.testing.assert_allclose(out[0], np.log(2.0), rtol=1e-6)
    np.testing.assert_allclose(out[1], 30.0, rtol=1e-6)
    assert 0.0 < out[2] < 1e-12


def test_sigmoid_stable_at_extremes():
    x = Tensor(np.array([0.0, 40.0, -40.0]))
    out = sigmoid(x).data
    np.testing.assert_allclose(out[0], 0.5)
    assert out[1] == pytest.approx(1.0)
    assert 0.0 < out[2] < 1e-15


def test_rotate_longitude_integer_shift_is_roll():
    x = np.arange(24.0).reshape(2, 4, 3)
    out = rotate_longitude(Tensor(x), 90.0).data  # 90 deg of 4 columns = 1
    np.testing.assert_allclose(out, np.roll(x, 1, axis=1))


def test_rotate_longitude_full_turn_identity():
    x = np.random.default_rng(2).random((3, 8, 3))
    out = rotate_longitude(Tensor(x), 360.0).data
    np.testing.assert_allclose(out, x)


def test_rotate_longitude_blends_fractional_shift():
    x = np.zeros((1, 4, 1))
    x[0, 0, 0] = 1.0
    out = rotate_longitude(Tensor(x), 45.0).data  # half a column
    np.testing.assert_allclose(out[0, :, 0], [0.5, 0.5, 0.0, 0.0])


def test_rotate_longitude_preserves_energy():
    x = np.random.default_rng(4).random((4, 16, 3))
    out = rotate_longitude(Tensor(x), 123.4).data
    np.testing.assert_allclose(out.sum(), x.sum(), rtol=1e-6)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradcheck(stride):
    rng = np.random.default_rng(stride)
    x = Tensor(rng.standard_normal((5, 4, 2)), requires_grad=True, name="x")
    k = Tensor(rng.standard_normal((3, 3, 2, 3)) * 0.4, requires_grad=True, name="k")
    b = Tensor(rng.standard_normal(3), requires_grad=True, name="b")
    report = grad_check(
        lambda inp: tsum(conv2d(inp[0], inp[1], inp[2], stride=stride)),
        [x, k, b],
        name=f"conv2d_s{stride}",
    )
    assert report.passed, str(report)


def test_conv2d_transpose_gradcheck():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((3, 3, 4)), requires_grad=True, name="x")
    k = Tensor(rng.standard_normal((3, 3, 2, 4)) * 0.4, requires_grad=True, name="k")
    b = Tensor(rng.standard_normal(2), requires_grad=True, name="b")
    report = grad_check(
        lambda inp: tsum(conv2d_transpose(inp[0], inp[1], inp[2], stride=2)),
        [x, k, b],
        name="tconv",
    )
    assert report.passed, str(report)


def test_group_norm_gradcheck():
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((4, 3, 6)), requires_grad=True, name="x")
    gamma = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True, name="gamma")
    beta = Tensor(rng.standard_normal(6), requires_grad=True, name="beta")
    w = Tensor(rng.standard_normal((4, 3, 6)))
    report = grad_check(
        lambda inp: tsum(group_norm(inp[0], 2, inp[1], inp[2]) * w),
        [x, gamma, beta],
        name="group_norm",
    )
    assert report.passed, str(report)


def test_activation_gradchecks():
    rng = np.random.default_rng(17)
    # keep prelu inputs away from its kink so central differences are valid
    x = Tensor(np.sign(rng.standard_normal((3, 4))) * rng.uniform(0.3, 1.5, (3, 4)),
               requires_grad=True, name="x")
    alpha = Tensor(rng.uniform(0.1, 0.5, 4), requires_grad=True, name="alpha")
    r1 = grad_check(lambda i: tsum(prelu(i[0], i[1])), [x, alpha], name="prelu")
    assert r1.passed, str(r1)
    y = Tensor(rng.standard_normal((3, 4)), requires_grad=True, name="y")
    w = Tensor(rng.standard_normal((3, 4)))
    r2 = grad_check(lambda i: tsum(softplus(i[0]) * w), [y], name="softplus")
    assert r2.passed, str(r2)
    r3 = grad_check(lambda i: tsum(sigmoid(i[0]) * w), [y], name="sigmoid")
    assert r3.passed, str(r3)


def test_rotate_longitude_gradcheck_fractional():
    rng = np.random.default_rng(21)
    x = Tensor(rng.random((2, 8, 3)), requires_grad=True, name="x")
    w = Tensor(rng.standard_normal((2, 8, 3)))
    report = grad_check(
        lambda i: tsum(rotate_longitude(i[0], 61.7) * w), [x], name="rotate"
    )
    assert report.passed, str(report)


def test_rotation_adjoint_identity():
    rng = np.random.default_rng(23)
    x = rng.random((3, 16, 2))
    y = rng.random((3, 16, 2))
    theta = 77.3
    with Tape():
        rx = rotate_longitude(Tensor(x), theta).data
        ry = rotate_longitude(Tensor(y), -theta).data
    np.testing.assert_allclose(np.vdot(rx, y), np.vdot(x, ry), rtol=1e-12)
