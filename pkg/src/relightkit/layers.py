"""Differentiable layers for channel-last image tensors.

All spatial operations take H x W x C arrays.  Convolutions use "same"
zero padding: the output is ceil(H / stride) x ceil(W / stride), total
padding is split with the smaller half on the top/left side.  The
transposed convolution is the exact adjoint of the convolution with the
same kernel and stride, which is the property that makes the pair usable
as encoder and decoder.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, record


def _same_pads(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """(out_size, pad_before, pad_after) for same padding."""
    out = -(-size // stride)  # ceil division
    total = max((out - 1) * stride + k - size, 0)
    before = total // 2
    return out, before, total - before


def _check_conv_args(kernel: Tensor, stride: int, transpose: bool) -> None:
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    if kernel.ndim != 4:
        raise ValueError(f"kernel must be kh x kw x C x C', got shape {kernel.shape}")
    kh, kw = kernel.shape[:2]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel spatial dims must be odd, got {kh}x{kw}")


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """2-D convolution, input H x W x Cin, kernel kh x kw x Cin x Cout.

    Output is ceil(H/stride) x ceil(W/stride) x Cout with same zero
    padding.  In spirit this is cross-correlation (no kernel flip), which
    is the usual convention for learned kernels.
    """
    _check_conv_args(kernel, stride, transpose=False)
    if x.ndim != 3:
        raise ValueError(f"input must be H x W x C, got shape {x.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cin:
        raise ValueError(f"input has {x.shape[2]} channels, kernel expects {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},), got {bias.shape}")

    h, w = x.shape[:2]
    oh, pt, pb = _same_pads(h, kh, stride)
    ow, pl, pr = _same_pads(w, kw, stride)
    xp = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0)))

    out = np.zeros((oh, ow, cout), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[i : i + stride * oh : stride, j : j + stride * ow : stride, :]
            out += patch @ kernel.data[i, j]
    if bias is not None:
        out = out + bias.data

    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        gxp = np.zeros_like(xp)
        gk = np.zeros_like(kernel.data)
        for i in range(kh):
            for j in range(kw):
                sl = (
                    slice(i, i + stride * oh, stride),
                    slice(j, j + stride * ow, stride),
                )
                gxp[sl[0], sl[1], :] += g @ kernel.data[i, j].T
                gk[i, j] = xp[sl[0], sl[1], :].reshape(-1, cin).T @ g.reshape(-1, cout)
        gx = gxp[pt : pt + h, pl : pl + w, :]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1))

    return record("conv2d", inputs, out, bwd)


def conv2d_transpose(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1
) -> Tensor:
    """Adjoint of :func:`conv2d`, input h x w x Cout, kernel kh x kw x Cin x Cout.

    Output is (h*stride) x (w*stride) x Cin.  For any x, y of matching
    shapes: <conv2d(x, k), y> == <x, conv2d_transpose(y, k)>.
    """
    _check_conv_args(kernel, stride, transpose=True)
    if x.ndim != 3:
        raise ValueError(f"input must be H x W x C, got shape {x.shape}")
    kh, kw, cin, cout = kernel.shape
    if x.shape[2] != cout:
        raise ValueError(f"input has {x.shape[2]} channels, kernel expects {cout}")
    if bias is not None and bias.shape != (cin,):
        raise ValueError(f"bias must have shape ({cin},), got {bias.shape}")

    h, w = x.shape[:2]
    oh, ow = h * stride, w * stride
    # Padding of the forward conv that maps (oh, ow) -> (h, w).
    _, pt, pb = _same_pads(oh, kh, stride)
    _, pl, pr = _same_pads(ow, kw, stride)

    zp = np.zeros((oh + pt + pb, ow + pl + pr, cin), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            zp[i : i + stride * h : stride, j : j + stride * w : stride, :] += (
                x.data @ kernel.data[i, j].T
            )
    out = zp[pt : pt + oh, pl : pl + ow, :].copy()
    if bias is not None:
        out = out + bias.data

    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        gp = np.pad(g, ((pt, pb), (pl, pr), (0, 0)))
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernel.data)
        for i in range(kh):
            for j in range(kw):
                patch = gp[i : i + stride * h : stride, j : j + stride * w : stride, :]
                gx += patch @ kernel.data[i, j]
                gk[i, j] = patch.reshape(-1, cin).T @ x.data.reshape(-1, cout)
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 1))

    return record("conv2d_transpose", inputs, out, bwd)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize channel groups over space and within-group channels.

    Input H x W x C with C divisible by ``groups``; gamma and beta are
    per-channel affine parameters.
    """
    if x.ndim != 3:
        raise ValueError(f"input must be H x W x C, got shape {x.shape}")
    h, w, c = x.shape
    if c % groups != 0:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have shape ({c},)")
    cg = c // groups

    xg = x.data.reshape(h, w, groups, cg)
    mu = xg.mean(axis=(0, 1, 3), keepdims=True)
    var = ((xg - mu) ** 2).mean(axis=(0, 1, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(h, w, c)
    out = xhat * gamma.data + beta.data

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 1))
        dbeta = g.sum(axis=(0, 1))
        dxh = (g * gamma.data).reshape(h, w, groups, cg)
        xh = xhat.reshape(h, w, groups, cg)
        m1 = dxh.mean(axis=(0, 1, 3), keepdims=True)
        m2 = (dxh * xh).mean(axis=(0, 1, 3), keepdims=True)
        dx = (inv * (dxh - m1 - xh * m2)).reshape(h, w, c)
        return dx, dgamma, dbeta

    return record("group_norm", (x, gamma, beta), out, bwd)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Parametric ReLU with one slope per channel (last axis)."""
    if alpha.shape != (x.shape[-1],):
        raise ValueError(f"alpha must have shape ({x.shape[-1]},), got {alpha.shape}")
    pos = x.data > 0
    out = np.where(pos, x.data, alpha.data * x.data)

    def bwd(g):
        dx = np.where(pos, g, g * alpha.data)
        dalpha = (g * x.data * ~pos).reshape(-1, x.shape[-1]).sum(axis=0)
        return dx, dalpha

    return record("prelu", (x, alpha), out, bwd)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow. Strictly positive."""
    out = np.logaddexp(0.0, x.data)
    sig = _sigmoid_arr(x.data)

    def bwd(g):
        return (g * sig,)

    return record("softplus", (x,), out, bwd)


def _sigmoid_arr(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_arr(x.data)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return record("sigmoid", (x,), s, bwd)


def _rotation_split(theta_deg: float, width: int) -> tuple[int, float]:
    shift = (theta_deg / 360.0) * width
    k = int(np.floor(shift))
    return k, shift - k


def rotate_longitude(x: Tensor, theta_deg: float) -> Tensor:
    """Rotate a lat-long map by ``theta_deg`` about the polar axis.

    Columns wrap; fractional shifts blend the two straddled columns
    linearly.  Content moves toward increasing column index for positive
    angles.  This is a linear map, so the adjoint is the rotation by the
    opposite angle with the same blend weights.
    """
    if x.ndim < 2:
        raise ValueError(f"expected a lat-long map, got shape {x.shape}")
    k, f = _rotation_split(float(theta_deg), x.shape[1])
    if f == 0.0:
        out = np.roll(x.data, k, axis=1)

        def bwd(g):
            return (np.roll(g, -k, axis=1),)

    else:
        out = (1.0 - f) * np.roll(x.data, k, axis=1) + f * np.roll(x.data, k + 1, axis=1)

        def bwd(g):
            return ((1.0 - f) * np.roll(g, -k, axis=1) + f * np.roll(g, -(k + 1), axis=1),)

    return record("rotate_longitude", (x,), out, bwd)
