"""Adam optimizer.

Update rule, per parameter element:

    m_t = b1 * m_{t-1} + (1 - b1) * g
    v_t = b2 * v_{t-1} + (1 - b2) * g^2
    mhat = m_t / (1 - b1^t)
    vhat = v_t / (1 - b2^t)
    p   -= lr * mhat / (sqrt(vhat) + eps)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    """Per-parameter first and second moments plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: list[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        elif len(self.m) != len(params):
            raise ValueError(
                f"optimizer state holds {len(self.m)} parameters, step got {len(params)}"
            )


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """Apply one bias-corrected Adam update in place.

    ``grads`` must align with ``params``; shapes are checked.  A non-finite
    gradient aborts the step before any parameter is touched.
    """
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    state.ensure(params)
    for p, g in zip(params, grads):
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{p.name or '<unnamed>'} of shape {p.shape}"
            )
        if not np.isfinite(g).all():
            raise NonFiniteError("adam_step", f"gradient of {p.name or '<unnamed>'}")
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype, copy=False)
