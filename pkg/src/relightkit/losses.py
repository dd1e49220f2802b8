"""Training losses on taped tensors.

Both image terms are masked L1 sums; the light term is a solid-angle
weighted squared L2 in log space.  The total is

    loss = L1(relit, target) + lambda_light * Llight + lambda_self * L1(self, jittered source)

with a lambda of zero disabling its branch outright.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, absolute, clamp_min, log1p, mul, reshape, square, sub, tsum

LOG_CLAMP = -1.0 + 1e-6


class _ClampCounter:
    """Counts light values that had to be clamped before log1p."""

    def __init__(self):
        self.count = 0

    def add(self, n: int) -> None:
        self.count += int(n)

    def reset(self) -> int:
        n, self.count = self.count, 0
        return n


clamp_warnings = _ClampCounter()


def _const(x, name=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float32), name=name)


def loss_image(pred: Tensor, target, mask) -> Tensor:
    """Sum of absolute masked differences: || M * (pred - target) ||_1.

    ``mask`` is (H, W) and weights all channels; it is used as-is, not
    binarized, so soft edges contribute proportionally.
    """
    target = _const(target, "target_image")
    mask = _const(mask, "mask")
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    if mask.shape != pred.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {pred.shape}")
    m3 = reshape(mask, (*mask.shape, 1)) if pred.ndim == 3 else mask
    return tsum(absolute(mul(m3, sub(pred, target))))


def loss_light(pred: Tensor, target, omega) -> Tensor:
    """|| Omega * (log1p(pred) - log1p(target)) ||_2^2.

    Solid angles weight each light pixel inside the square, so doubling
    Omega quadruples the loss.  Predictions at or below -1 are clamped to
    -1 + 1e-6 before the log (counted in ``clamp_warnings``).
    """
    target = _const(target, "target_light")
    omega = _const(omega, "omega")
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} vs target {target.shape}")
    if omega.shape != pred.shape[:2]:
        raise ValueError(f"omega {omega.shape} does not match light {pred.shape}")
    n_clamped = int(np.count_nonzero(pred.data <= LOG_CLAMP))
    if n_clamped:
        clamp_warnings.add(n_clamped)
    safe = clamp_min(pred, LOG_CLAMP)
    diff = sub(log1p(safe), log1p(target))
    om3 = reshape(omega, (*omega.shape, 1)) if pred.ndim == 3 else omega
    return tsum(square(mul(om3, diff)))


def compose_total(
    target_term: Tensor,
    light_term: Tensor | None,
    self_term: Tensor | None,
    lambda_light: float = 0.8,
    lambda_self: float = 1.0,
) -> Tensor:
    """Weighted combination of the branch losses.

    A missing term is only legal when its lambda is zero; a zero lambda
    contributes nothing even if the term was computed.
    """
    if lambda_light < 0.0 or lambda_self < 0.0:
        raise ValueError("loss weights must be non-negative")
    total = target_term
    if lambda_light > 0.0:
        if light_term is None:
            raise ValueError("lambda_light > 0 but no light term given")
        total = total + lambda_light * light_term
    if lambda_self > 0.0:
        if self_term is None:
            raise ValueError("lambda_self > 0 but no self term given")
        total = total + lambda_self * self_term
    return total
