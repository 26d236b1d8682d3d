"""Float64 tensors, a recording tape for reverse-mode gradients, and a
finite-difference oracle.

Every gradient-producing op appends one record to the active tape in
execution order, so the reversed record is already a valid reverse
topological order: each node is visited after all of its consumers.
Adjoint accumulation follows that fixed order, which makes repeated
backward passes over identically rebuilt graphs bitwise reproducible.

All arithmetic is 64-bit. Non-finite values are hard errors at the op
boundary rather than silently propagated NaNs.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "NonFiniteError",
    "TapeError",
    "apply_op",
    "backward",
    "finite_diff_grad",
    "max_rel_err",
    "add",
    "sub",
    "mul",
    "neg",
    "tsum",
    "tmean",
]


class NonFiniteError(FloatingPointError):
    """An op produced or received a NaN/Inf value."""


class TapeError(RuntimeError):
    """backward() was called without a usable tape."""


_TAPE_STACK: list["Tape"] = []


def _require_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer.

    ``grad`` is populated on requires-grad leaves by :func:`backward`;
    intermediates never keep gradients. The data buffer is exclusively
    owned by its creator until construction completes, after which it
    must be treated as read-only (the SGD step is the single writer of
    parameter tensors).
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _require_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.data.shape)}, requires_grad={self.requires_grad})"

    # Arithmetic sugar. Python scalars and ndarrays are treated as constants.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, c):
        return div_scalar(self, float(c))

    def sum(self) -> "Tensor":
        return tsum(self)

    def mean(self) -> "Tensor":
        return tmean(self)


class Tape:
    """Ordered record of executed ops, enough to replay adjoints.

    Use as a context manager; ops executed inside record themselves when
    any input requires a gradient. A tape belongs to one logical thread.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self._records)

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def apply_op(
    inputs: Sequence[Tensor],
    out_data: np.ndarray,
    backward_fn: Callable[[np.ndarray], tuple],
    name: str = "op",
) -> Tensor:
    """Wrap an op result and record it on the active tape.

    ``backward_fn`` maps the output adjoint to one gradient array (or
    None) per input, each shaped like the corresponding input.
    """
    _require_finite(out_data, name)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.tape = None
    out.requires_grad = False
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.tape = tape
        tape._records.append((out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Leaves recorded on the tape but not contributing to the loss receive
    zero gradients. Intermediate adjoints are discarded as soon as their
    record is consumed.
    """
    if loss.shape != (1,):
        raise ValueError(f"loss must have shape (1,), got {loss.shape}")
    tape = loss.tape
    if tape is None or not tape._records:
        raise TapeError("tape empty: loss was not recorded on a tape")

    produced = {id(out) for out, _, _ in tape._records}
    leaves: dict[int, Tensor] = {}
    for _, inputs, _ in tape._records:
        for t in inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t

    adjoint: dict[int, np.ndarray] = {id(loss): np.ones(1)}
    for out, inputs, fn in reversed(tape._records):
        g = adjoint.pop(id(out), None)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NonFiniteError("non-finite adjoint encountered during backward")
        grads = fn(g)
        for t, gi in zip(inputs, grads):
            if gi is None or not t.requires_grad:
                continue
            acc = adjoint.get(id(t))
            adjoint[id(t)] = gi if acc is None else acc + gi

    for key, t in leaves.items():
        a = adjoint.get(key)
        t.grad = np.zeros_like(t.data) if a is None else np.asarray(a, dtype=np.float64)


def finite_diff_grad(f, x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle for a scalar-valued ``f``.

    Uses a per-element step eps*(1+|x_i|); f must be deterministic and
    evaluable at the perturbed points. ``x.data`` is perturbed in place
    and restored, so ``f`` may simply close over ``x``.
    """
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        h = eps * (1.0 + abs(orig))
        flat[i] = orig + h
        fp = _scalar(f(x))
        flat[i] = orig - h
        fm = _scalar(f(x))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NonFiniteError("f returned a non-finite value during finite differencing")
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.data.shape)


def max_rel_err(analytic: np.ndarray, reference: np.ndarray) -> float:
    """max over elements of |analytic - reference| / max(1, |reference|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(reference))
    return float(np.max(np.abs(analytic - reference) / denom)) if analytic.size else 0.0


def _scalar(v) -> float:
    if isinstance(v, Tensor):
        return v.item()
    return float(v)


def _as_tensor(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return apply_op((a, b), out, bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return apply_op((a, b), out, bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return apply_op((a, b), out, bwd, "mul")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return apply_op((a,), -a.data, bwd, "neg")


def div_scalar(a: Tensor, c: float) -> Tensor:
    if c == 0.0:
        raise ZeroDivisionError("tensor division by zero")

    def bwd(g):
        return (g / c,)

    return apply_op((a,), a.data / c, bwd, "div_scalar")


def tsum(a: Tensor) -> Tensor:
    shape = a.data.shape

    def bwd(g):
        return (np.full(shape, g[0]),)

    return apply_op((a,), np.array([a.data.sum()]), bwd, "sum")


def tmean(a: Tensor) -> Tensor:
    shape = a.data.shape
    n = a.data.size

    def bwd(g):
        return (np.full(shape, g[0] / n),)

    return apply_op((a,), np.array([a.data.mean()]), bwd, "mean")
