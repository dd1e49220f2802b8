"""Dense float tensors with taped reverse-mode differentiation.

The engine is deliberately small: values are numpy arrays in row-major
order, operations append themselves to an explicitly opened :class:`Tape`,
and :func:`backward` walks the tape once in reverse.  Training code runs in
float32; gradient checking runs the same graph in float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf.

    Non-finite values are surfaced immediately instead of being allowed to
    propagate; the message names the operation that produced them.
    """

    def __init__(self, op_name: str, detail: str = ""):
        self.op_name = op_name
        msg = f"operation '{op_name}' produced non-finite values"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


_finite_checks = True


def set_finite_checks(enabled: bool) -> bool:
    """Toggle the per-operation finiteness check. Returns the previous state."""
    global _finite_checks
    previous = _finite_checks
    _finite_checks = bool(enabled)
    return previous


def _check_finite(arr: np.ndarray, op_name: str) -> None:
    if _finite_checks and not np.isfinite(arr).all():
        n_bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(op_name, f"{n_bad} of {arr.size} elements")


class Tensor:
    """A dense float array plus a differentiability flag.

    Parameters
    ----------
    data : array-like
        Values; anything ``np.asarray`` accepts.  Integer input is cast to
        the default float dtype, float32/float64 input keeps its dtype.
    requires_grad : bool
        Whether gradients should be accumulated for this tensor.
    name : str, optional
        Used in diagnostics (parameter names, error messages).
    """

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray):
            arr = data if data.dtype in _FLOAT_DTYPES else data.astype(DEFAULT_DTYPE)
        else:
            # Lists and scalars land on the working precision; float64 has
            # to be asked for with an explicit array.
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        _check_finite(arr, name or "tensor")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad}{tag})"

    # Arithmetic sugar.  Scalars and ndarrays are wrapped as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self))

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other, self))

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype not in _FLOAT_DTYPES:
        dtype = like.dtype if like is not None else DEFAULT_DTYPE
        arr = arr.astype(dtype)
    return Tensor(arr)


class _Node:
    __slots__ = ("op_name", "inputs", "output", "backward_fn")

    def __init__(self, op_name, inputs, output, backward_fn):
        self.op_name = op_name
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of operations, used for one reverse pass.

    Operations executed while a tape is active (``with Tape() as tape:``)
    are appended in execution order, which is already a topological order
    of the dataflow graph.  The tape is single-threaded by design.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _append(self, node: _Node) -> None:
        self._nodes.append(node)

    def backward(self, loss: Tensor) -> "Gradients":
        return backward(loss, self)


class Gradients:
    """Mapping from tensors to gradient arrays.

    Tensors that required gradients but were never visited get zeros, so a
    training loop can ask for the gradient of every parameter
    unconditionally.
    """

    def __init__(self, grads: dict[int, np.ndarray]):
        self._grads = grads

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def of(self, tensors: Iterable[Tensor]) -> list[np.ndarray]:
        return [self[t] for t in tensors]


def backward(loss: Tensor, tape: Tape) -> Gradients:
    """Accumulate d(loss)/d(tensor) for every recorded tensor.

    One reverse sweep over the tape; each node's backward rule runs exactly
    once.  ``loss`` must be a scalar (size-1) tensor.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue
        input_grads = node.backward_fn(g_out)
        for t, g in zip(node.inputs, input_grads):
            if g is None or not t.requires_grad:
                continue
            _check_finite(g, node.op_name + ".backward")
            held = grads.get(id(t))
            grads[id(t)] = g if held is None else held + g
    return Gradients(grads)


def record(
    op_name: str,
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    """Finish an operation: check the result, build the output tensor, and
    append a node to the active tape when anything upstream needs gradients."""
    _check_finite(out_data, op_name)
    needs = Tape._active is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = needs
    out.name = None
    if needs:
        Tape._active._append(_Node(op_name, tuple(inputs), out, backward_fn))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", (a, b), out, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return record("mul", (a, b), out, bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data / b.data

    def bwd(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return record("div", (a, b), out, bwd)


def neg(a: Tensor) -> Tensor:
    return record("neg", (a,), -a.data, lambda g: (-g,))


def absolute(a: Tensor) -> Tensor:
    """|a| elementwise. The subgradient at 0 is taken as 0."""
    out = np.abs(a.data)

    def bwd(g):
        return (g * np.sign(a.data),)

    return record("abs", (a,), out, bwd)


def log1p(a: Tensor) -> Tensor:
    out = np.log1p(a.data)

    def bwd(g):
        return (g / (1.0 + a.data),)

    return record("log1p", (a,), out, bwd)


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """max(a, lo). Gradient passes only where the input was not clamped."""
    out = np.maximum(a.data, lo)
    keep = a.data > lo

    def bwd(g):
        return (g * keep,)

    return record("clamp_min", (a,), out, bwd)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def bwd(g):
        return (g * (2.0 * a.data),)

    return record("square", (a,), out, bwd)


# ---------------------------------------------------------------------------
# Shape plumbing
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(old),)

    return record("reshape", (a,), out, bwd)


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()
    old = a.shape

    def bwd(g):
        return (_unbroadcast(g, old),)

    return record("broadcast_to", (a,), out, bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return record("concat", tuple(tensors), out, bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice ``length`` entries along ``axis`` starting at ``start``."""
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = a.data[index].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return record("narrow", (a,), out, bwd)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def bwd(g):
        if not keepdims:
            expand = list(g.shape)
            for ax in sorted(axes):
                expand.insert(ax, 1)
            g = g.reshape(expand)
        return (np.broadcast_to(g, shape).copy(),)

    return record("sum", (a,), out, bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    return mul(tsum(a, axis=axes, keepdims=keepdims), 1.0 / count)
