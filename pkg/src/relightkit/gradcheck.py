"""Central finite-difference verification of taped gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    n_elements: int
    worst: str = ""

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (
            f"[{verdict}] {self.name}: max rel err {self.max_rel_error:.3e} "
            f"(tol {self.tolerance:.1e}, {self.n_elements} elements{self.worst})"
        )


def grad_check(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    tolerance: float = 1e-3,
    h: float = 1e-4,
    name: str = "fn",
) -> GradCheckReport:
    """Compare taped gradients of ``fn`` against central differences.

    ``fn`` maps the given tensors to a scalar tensor.  Every element of
    every input with ``requires_grad`` is perturbed by +/- h.  Inputs
    should be float64; float32 rounding is far above any useful tolerance.

    Relative error per element is |analytic - numeric| with denominator
    max(|analytic|, |numeric|, 1e-4), so gradients that are genuinely zero
    do not divide by zero.
    """
    for t in inputs:
        if t.requires_grad and t.dtype != np.float64:
            raise ValueError(f"grad_check input {t.name or ''} must be float64, got {t.dtype}")

    with Tape() as tape:
        loss = fn(inputs)
    grads = tape.backward(loss)

    max_err = 0.0
    worst = ""
    checked = 0
    for t in inputs:
        if not t.requires_grad:
            continue
        analytic = grads[t]
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = fn(inputs).item()
            flat[i] = keep - h
            fm = fn(inputs).item()
            flat[i] = keep
            num[i] = (fp - fm) / (2.0 * h)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-4)
        rel = np.abs(a - num) / denom
        checked += flat.size
        idx = int(np.argmax(rel))
        if rel[idx] > max_err:
            max_err = float(rel[idx])
            worst = f"; worst at {t.name or 'input'}[{idx}]: analytic {a[idx]:.6e} vs fd {num[idx]:.6e}"
    return GradCheckReport(name, max_err, tolerance, checked, worst)

def primitive_checks(seed: int = 0, tolerance: float = 1e-3) -> list[GradCheckReport]:
    """Finite-difference checks for every differentiable building block.

    Points are drawn away from the kinks of absolute/clamp/prelu so the
    central difference is valid.
    """
    from . import layers
    from .tensor import (
        absolute,
        broadcast_to,
        clamp_min,
        concat,
        log1p,
        narrow,
        reshape,
        tmean,
        tsum,
    )

    rng = np.random.default_rng([seed, 77])

    def t(shape, lo=-1.0, hi=1.0, away_from=None, margin=0.25, name=""):
        a = rng.uniform(lo, hi, size=shape)
        if away_from is not None:
            sign = np.where(a >= away_from, 1.0, -1.0)
            a = a + sign * margin
        return Tensor(a.astype(np.float64), requires_grad=True, name=name)

    reports = []

    def run(name, fn, inputs):
        reports.append(grad_check(fn, inputs, tolerance=tolerance, name=name))

    x = t((3, 4), name="x")
    y = t((3, 4), name="y")
    run("add", lambda i: tsum(i[0] + i[1]), [x, y])
    run("sub", lambda i: tsum(i[0] - i[1]), [x, y])
    run("mul", lambda i: tsum(i[0] * i[1]), [x, y])
    d = t((3, 4), lo=0.5, hi=1.5, name="d")
    run("div", lambda i: tsum(i[0] / i[1]), [x, d])
    run("neg", lambda i: tsum(-i[0]), [x])
    ax = t((3, 4), away_from=0.0, name="ax")
    run("absolute", lambda i: tsum(absolute(i[0])), [ax])
    p = t((3, 4), lo=0.1, hi=2.0, name="p")
    run("log1p", lambda i: tsum(log1p(i[0])), [p])
    cx = t((3, 4), away_from=0.0, name="cx")
    run("clamp_min", lambda i: tsum(clamp_min(i[0], 0.0)), [cx])
    run("square", lambda i: tsum(i[0] * i[0]), [x])
    run("reshape", lambda i: tsum(reshape(i[0], (4, 3)) * 1.5), [x])
    b = t((1, 4), name="b")
    run("broadcast_to", lambda i: tsum(broadcast_to(i[0], (3, 4)) * i[1]), [b, y])
    run("concat", lambda i: tsum(concat([i[0], i[1]], axis=1) * 0.5), [x, y])
    run("narrow", lambda i: tsum(narrow(i[0], axis=1, start=1, length=2)), [x])
    run("tsum_axis", lambda i: tsum(tsum(i[0], axis=0) * 2.0), [x])
    run("tmean", lambda i: tmean(i[0] * i[0]), [x])

    img = t((5, 6, 2), lo=0.0, hi=1.0, name="img")
    k = t((3, 3, 2, 3), name="k")
    kb = t((3,), name="kb")
    run("conv2d_s1", lambda i: tsum(layers.conv2d(i[0], i[1], i[2], stride=1)), [img, k, kb])
    run("conv2d_s2", lambda i: tsum(layers.conv2d(i[0], i[1], i[2], stride=2)), [img, k, kb])
    timg = t((3, 3, 3), name="timg")
    tk = t((3, 3, 2, 3), name="tk")
    tb = t((2,), name="tb")
    run(
        "conv2d_transpose",
        lambda i: tsum(layers.conv2d_transpose(i[0], i[1], i[2], stride=2)),
        [timg, tk, tb],
    )
    gx = t((4, 4, 4), name="gx")
    gamma = t((4,), lo=0.5, hi=1.5, name="gamma")
    beta = t((4,), name="beta")
    run(
        "group_norm",
        lambda i: tsum(layers.group_norm(i[0], 2, i[1], i[2])),
        [gx, gamma, beta],
    )
    px = t((3, 3, 2), away_from=0.0, name="px")
    alpha = t((2,), lo=0.1, hi=0.4, name="alpha")
    run("prelu", lambda i: tsum(layers.prelu(i[0], i[1])), [px, alpha])
    run("softplus", lambda i: tsum(layers.softplus(i[0])), [x])
    run("sigmoid", lambda i: tsum(layers.sigmoid(i[0]) * i[1]), [x, y])
    rx = t((2, 8, 3), lo=0.0, hi=1.0, name="rx")
    run(
        "rotate_longitude",
        lambda i: tsum(layers.rotate_longitude(i[0], 61.7) * 0.5),
        [rx],
    )
    return reports


def network_check(seed: int = 0, tolerance: float = 1e-3, h: float = 1e-6) -> GradCheckReport:
    """Finite-difference check of the full network loss wrt every weight.

    The step is smaller than for primitives: with thousands of hidden
    activations, a 1e-4 perturbation of some weight pushes an activation
    across a kink of prelu or of the absolute-value loss, and the central
    difference then measures a chord across the kink instead of the
    one-sided slope. 1e-6 stays on one side; 64-bit rounding noise at
    this scale is still two orders below the tolerance.
    """
    from .envmap import solid_angle_map
    from .layers import rotate_longitude
    from .losses import compose_total, loss_image, loss_light
    from .prnet import (
        PRNetParams,
        decode,
        embed_light,
        encode,
        gradcheck_config,
        init_params,
        predict_light,
    )

    config = gradcheck_config()
    params64 = init_params(config, seed=seed, dtype=np.float64)
    names = params64.names()
    inputs = [params64[n] for n in names]
    for tns in inputs:
        tns.requires_grad = True
        tns.name = tns.name or "param"

    rng = np.random.default_rng([seed, 1234])
    d = config.resolution
    hl, wl = config.light_shape
    image = rng.uniform(0.05, 1.0, size=(d, d, 3))
    image_jit = np.clip(image + rng.uniform(-0.02, 0.02, size=image.shape), 0.0, 1.0)
    target = rng.uniform(0.0, 1.0, size=(d, d, 3))
    light_t = rng.uniform(0.0, 2.0, size=(hl, wl, 3))
    light_s = rng.uniform(0.0, 2.0, size=(hl, wl, 3))
    mask = (rng.random((d, d)) > 0.2).astype(np.float64)
    omega = solid_angle_map(hl, wl)

    def fn(tensors):
        p = PRNetParams(dict(zip(names, tensors)))
        enc = encode(p, config, Tensor(image))
        light_pred, _ = predict_light(p, config, enc.bottleneck)
        pred_t = decode(p, config, enc, embed_light(p, config, Tensor(light_t)))
        l_target = loss_image(pred_t, target, mask)
        l_light = loss_light(light_pred, light_s, omega)
        pred_s = decode(p, config, enc, embed_light(p, config, rotate_longitude(light_pred, 33.0)))
        l_self = loss_image(pred_s, image_jit, mask)
        return compose_total(l_target, l_light, l_self, 0.8, 1.0)

    return grad_check(fn, inputs, tolerance=tolerance, h=h, name="prnet_full")
