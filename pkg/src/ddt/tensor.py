"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` wraps an ``np.ndarray`` (float32 or float64). Operations
record onto the innermost active :class:`Tape`; ``Tape.backward(loss)``
replays the records in reverse and deposits ``dL/dtheta`` into ``.grad`` of
every leaf tensor that has ``requires_grad=True``. With no tape active the
same functions are plain numpy compute, which is the inference fast path.

Conventions used by every op in this module and in :mod:`ddt.nn`:

* backward closures never mutate the incoming cotangent ``g`` and return
  arrays they own (or ``None`` for inputs that need no gradient);
* gradient accumulation is out-of-place, so it is safe for a backward rule
  to hand the same array to two inputs;
* a tape is single-shot: ``backward`` consumes it and a second call raises.

Debug mode (``set_debug(True)`` or the DDT_DEBUG environment variable)
asserts that every op output is finite, at a large speed cost.
"""

from __future__ import annotations

import os
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "FlopCounter",
    "ShapeMismatchError",
    "set_debug",
    "parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "matmul",
    "reshape",
    "permute",
    "concat",
    "split",
    "narrow",
    "tsum",
    "tmean",
    "tabs",
    "tanh",
    "sigmoid",
    "clip",
    "softmax",
]

SUPPORTED_DTYPES = (np.float32, np.float64)

_DEBUG = bool(int(os.environ.get("DDT_DEBUG", "0") or "0"))


class ShapeMismatchError(ValueError):
    """Raised when operand geometry is incompatible."""


def set_debug(flag: bool) -> None:
    """Toggle per-op finiteness assertions (slow; off by default)."""
    global _DEBUG
    _DEBUG = bool(flag)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------


class Tensor:
    """A numpy buffer plus autodiff metadata.

    ``requires_grad=True`` on a user-constructed tensor marks a leaf:
    ``Tape.backward`` will populate its ``.grad``. Tensors produced by ops
    carry ``requires_grad=True`` transitively while a tape is recording, but
    only leaves keep gradients after backward.

    The buffer is treated as immutable by all ops; in-place mutation is
    reserved for parameter-update entry points (the optimizer and
    checkpoint restore), which run between tapes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._leaf = bool(requires_grad)

    # -- introspection ------------------------------------------------------

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def numpy(self) -> np.ndarray:
        """The underlying buffer (not a copy); treat as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{flag})"

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(constant(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def permute(self, *axes):
        return permute(self, axes[0] if len(axes) == 1 and isinstance(axes[0], (tuple, list)) else axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def abs(self):
        return tabs(self)


def _scalar_err(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def parameter(data, dtype=np.float32) -> Tensor:
    """A leaf tensor that receives gradients."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True)


def constant(data, like: Tensor | None = None, dtype=None) -> Tensor:
    """A non-differentiable tensor, dtype-matched to `like` when given."""
    if dtype is None and like is not None:
        dtype = like.data.dtype
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------


class _Node:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out: Tensor, inputs: tuple, bwd: Callable):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


class Tape:
    """Records one forward pass; replays it in reverse on ``backward``.

    Use as a context manager::

        with Tape() as tape:
            loss = model_loss(...)
        tape.backward(loss)

    ``backward`` assigns fresh gradients to every reachable leaf and zeros
    to unreachable leaves that were touched by recorded ops, unless
    ``accumulate=True`` adds onto existing ``.grad`` buffers instead. The
    tape is consumed by ``backward``; reuse raises ``RuntimeError``.
    """

    def __init__(self):
        self._nodes: list[_Node] | None = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def _record(self, node: _Node) -> None:
        if self._nodes is None:
            raise RuntimeError("tape already consumed by backward(); use a fresh Tape")
        self._nodes.append(node)

    def backward(self, loss: Tensor, accumulate: bool = False) -> None:
        if self._nodes is None:
            raise RuntimeError("tape already consumed by backward(); use a fresh Tape")
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        nodes, self._nodes = self._nodes, None

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(nodes):
            g = grads.pop(id(node.out), None)
            for inp in node.inputs:
                if inp.requires_grad and inp._leaf:
                    leaves.setdefault(id(inp), inp)
            if g is None:
                continue
            in_grads = node.bwd(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi

        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(leaf.data)
            elif g.shape != leaf.shape:
                g = np.broadcast_to(g, leaf.shape).copy()
            if accumulate and leaf.grad is not None:
                leaf.grad = leaf.grad + g
            else:
                leaf.grad = g


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _finish(out_data: np.ndarray, inputs: tuple, bwd: Callable) -> Tensor:
    """Wrap op output; record a node when a tape is live and grads flow."""
    if _DEBUG and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite values in op output")
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(_Node(out, inputs, bwd))
    return out


# ---------------------------------------------------------------------------
# FLOP counting
# ---------------------------------------------------------------------------


class FlopCounter:
    """Counts floating-point ops of forward passes run inside the context.

    Conventions (documented constants, chosen once and used consistently):
    matmul and convolution count 2 ops per multiply-accumulate, bias adds
    excluded; elementwise add/sub/mul count 1/output element; softmax 5,
    channel layer-norm 8, GELU 6, bilinear sampling 8 per output element
    plus 6 per coordinate transform.
    """

    def __init__(self):
        self.total: int = 0

    def add(self, n: int) -> None:
        self.total += int(n)

    def __enter__(self) -> "FlopCounter":
        _COUNTER_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _COUNTER_STACK.pop()
        return False


_COUNTER_STACK: list[FlopCounter] = []


def _count(n: int) -> None:
    if _COUNTER_STACK:
        for c in _COUNTER_STACK:
            c.add(n)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        if x.data.dtype != like.data.dtype:
            raise TypeError(
                f"dtype mismatch: {x.data.dtype.name} vs {like.data.dtype.name}; cast explicitly"
            )
        return x
    return constant(x, like=like)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _coerce(b, a)
    if isinstance(b, Tensor):
        return _coerce(a, b), b
    raise TypeError("at least one operand must be a Tensor")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a cotangent down to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    _count(max(a.size, b.size))
    return _finish(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    _count(max(a.size, b.size))
    return _finish(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    _count(max(a.size, b.size))

    def bwd(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _finish(a.data * b.data, (a, b), bwd)


def tabs(x: Tensor) -> Tensor:
    _count(x.size)
    sign = np.sign(x.data)
    return _finish(np.abs(x.data), (x,), lambda g: (g * sign,))


def tanh(x: Tensor) -> Tensor:
    _count(4 * x.size)
    y = np.tanh(x.data)
    return _finish(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    _count(4 * x.size)
    # exp on the negative half-line only, for stability in f32
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    y[~pos] = e / (1.0 + e)
    return _finish(y, (x,), lambda g: (g * (y * (1.0 - y)),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes inside the closed interval."""
    _count(x.size)
    mask = ((x.data >= lo) & (x.data <= hi)).astype(x.data.dtype)
    return _finish(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _norm_axes(axis, ndim: int) -> tuple:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    _count(x.size)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _finish(out, (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    _count(x.size)
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _finish(out, (x,), bwd)


# ---------------------------------------------------------------------------
# movement ops (pure data movement, zero flops)
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if np.prod(shape, dtype=np.int64) != x.size and -1 not in shape:
        raise ShapeMismatchError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return _finish(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError(f"permute: {axes} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return _finish(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat of empty sequence")
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(tensors)):
            sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _finish(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis; backward pads with zeros."""
    axis = axis % x.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeMismatchError(
            f"narrow: [{start}:{start + length}) outside axis {axis} of shape {x.shape}"
        )
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)

    return _finish(x.data[sl].copy(), (x,), bwd)


def split(x: Tensor, sections: int | Sequence[int], axis: int = 0) -> tuple[Tensor, ...]:
    axis = axis % x.ndim
    total = x.shape[axis]
    if isinstance(sections, int):
        if total % sections:
            raise ShapeMismatchError(f"split: axis {axis} size {total} not divisible by {sections}")
        sizes = [total // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != total:
            raise ShapeMismatchError(f"split: sizes {sizes} do not sum to axis size {total}")
    out, start = [], 0
    for s in sizes:
        out.append(narrow(x, axis, start, s))
        start += s
    return tuple(out)


# ---------------------------------------------------------------------------
# matmul / softmax
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs ndim>=2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a.data @ b.data
    _count(2 * out.size * a.shape[-1])

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _finish(out, (a, b), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    _count(5 * x.size)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _finish(y, (x,), bwd)
