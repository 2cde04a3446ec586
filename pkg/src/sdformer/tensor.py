"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a contiguous numpy buffer (float32 or float64) plus an
optional trace node recording how it was produced.  Calling ``backward()`` on
a scalar walks the trace in reverse topological order and accumulates
gradients into every reachable tensor with ``requires_grad``.

The trace is a plain DAG attached to the tensors themselves; it is confined
to one logical thread.  Tensors are treated as immutable after construction,
so any number of concurrent readers (e.g. parallel forward passes sharing
weights) is safe.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "TraceNode",
    "no_grad",
    "grad_enabled",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "split",
]


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager disabling trace recording (inference mode)."""

    def __enter__(self):
        self._saved = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._saved
        return False


class TraceNode:
    """One step of the recorded forward computation.

    ``vjp`` maps the gradient of the node's output to gradients of each
    input (``None`` for inputs that need no gradient).  Shapes of returned
    gradients must equal the corresponding input shapes.
    """

    __slots__ = ("op", "inputs", "vjp")

    def __init__(self, op: str, inputs: tuple["Tensor", ...], vjp):
        self.op = op
        self.inputs = inputs
        self.vjp = vjp


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: TraceNode | None = None

    # -- basic introspection -------------------------------------------------

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
        return self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        if self.data.dtype == np.dtype(dtype):
            return self
        return Tensor(self.data.astype(dtype))

    def zero_grad(self):
        self.grad = None

    # -- reverse pass --------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError(
                f"backward() requires a scalar root, got shape {self.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for t in order:
            node = t.node
            if node is None or t.grad is None:
                continue
            grads = node.vjp(t.grad)
            for inp, g in zip(node.inputs, grads):
                if g is None or not _wants_grad(inp):
                    continue
                if g.shape != inp.data.shape:
                    raise RuntimeError(
                        f"gradient shape {g.shape} != value shape {inp.data.shape} in op {node.op}"
                    )
                if inp.grad is None:
                    inp.grad = g.copy() if _aliases(g, inp) else g
                else:
                    inp.grad = inp.grad + g

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __radd__(self, other):
        return add(_coerce(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self.dtype))

    def __rmul__(self, other):
        return mul(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def abs(self):
        return absolute(self)

    def square(self):
        return square(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t.node is not None


def _aliases(g: np.ndarray, t: Tensor) -> bool:
    return g is t.data or (g.base is not None and g.base is t.data)


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order of the trace, iteratively (deep tapes)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if id(inp) not in seen:
                    stack.append((inp, False))
    order.reverse()
    return order


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data: np.ndarray, op: str, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Wrap an op result, recording a trace node when gradients are live."""
    out = Tensor(data)
    if grad_enabled() and any(_wants_grad(t) for t in inputs):
        out.node = TraceNode(op, inputs, vjp)
    return out


def _reduce_broadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that were broadcast in the forward op."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _reduce_broadcast(g, a.data.shape), _reduce_broadcast(g, b.data.shape)

    return make_result(a.data + b.data, "add", (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _reduce_broadcast(g, a.data.shape), _reduce_broadcast(-g, b.data.shape)

    return make_result(a.data - b.data, "sub", (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _reduce_broadcast(g * b.data, a.data.shape),
            _reduce_broadcast(g * a.data, b.data.shape),
        )

    return make_result(a.data * b.data, "mul", (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, "neg", (a,), lambda g: (-g,))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at exactly 0, so masked-out zeros contribute nothing
    def vjp(g):
        return (g * np.sign(a.data),)

    return make_result(np.abs(a.data), "abs", (a,), vjp)


def square(a: Tensor) -> Tensor:
    def vjp(g):
        return (g * (2.0 * a.data),)

    return make_result(a.data * a.data, "square", (a,), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(a.data.sum(axis=axis, keepdims=keepdims), "sum", (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape) / n,)

    return make_result(a.data.mean(axis=axis, keepdims=keepdims), "mean", (a,), vjp)


# -- shape manipulation --------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def vjp(g):
        return (np.ascontiguousarray(g).reshape(old),)

    return make_result(np.ascontiguousarray(a.data).reshape(shape), "reshape", (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return make_result(np.ascontiguousarray(a.data.transpose(axes)), "transpose", (a,), vjp)


def concat(parts, axis: int = 0) -> Tensor:
    parts = tuple(parts)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return make_result(np.concatenate([p.data for p in parts], axis=axis), "concat", parts, vjp)


def split(a: Tensor, sizes, axis: int = 0) -> list[Tensor]:
    """Split along ``axis`` into consecutive chunks of the given sizes."""
    sizes = list(sizes)
    if sum(sizes) != a.data.shape[axis]:
        raise ValueError(
            f"split sizes {sizes} do not sum to extent {a.data.shape[axis]} on axis {axis}"
        )
    offsets = np.cumsum([0] + sizes)
    outs = []
    for i, sz in enumerate(sizes):
        sl = [slice(None)] * a.data.ndim
        sl[axis] = slice(offsets[i], offsets[i] + sz)
        sl = tuple(sl)

        def vjp(g, sl=sl):
            buf = np.zeros_like(a.data)
            buf[sl] = g
            return (buf,)

        outs.append(make_result(np.ascontiguousarray(a.data[sl]), "split", (a,), vjp))
    return outs


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; 2-D or batched 3-D with matching batch extents."""
    ad, bd = a.data, b.data
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner dims disagree: {ad.shape} @ {bd.shape}")
    if ad.ndim == 3 and bd.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ValueError(f"matmul batch dims disagree: {ad.shape} @ {bd.shape}")

    def vjp(g):
        ga = g @ bd.swapaxes(-1, -2)
        gb = ad.swapaxes(-1, -2) @ g
        return ga, gb

    return make_result(ad @ bd, "matmul", (a, b), vjp)
