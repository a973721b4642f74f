"""Reverse-mode automatic differentiation on numpy arrays.

A ``Tape`` is a Wengert list: every primitive appends one node holding its
output value, its parent node indices and a vector-Jacobian product. Nodes
are appended in evaluation order, so walking the list backwards is a valid
topological order and each node is visited once.

``Var`` is a handle to a node. Operators on ``Var`` record onto its tape;
the module-level functions (``exp``, ``relu``, ``sum`` ...) accept either a
``Var`` or a plain float/array, so numerical code written against them runs
unchanged with or without a tape.

Subgradient conventions: ``relu`` and ``maximum`` pass gradient only where
the argument is strictly positive / strictly larger.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from ..utils import ShapeError

logger = logging.getLogger(__name__)

Array = np.ndarray
VJP = Callable[[Array], tuple[Array | None, ...]]


@dataclass
class _Node:
    value: Array
    parents: tuple[int, ...]
    vjp: VJP | None


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum *grad* down to *shape* (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tape:
    """Append-only list of primitive operations with value and adjoint buffers."""

    def __init__(self) -> None:
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def var(self, value: Any) -> "Var":
        """Register a leaf (a parameter or an input that needs a gradient)."""
        return self._push(np.array(value, dtype=np.float64), (), None)

    def _push(self, value: Array, parents: tuple[int, ...], vjp: VJP | None) -> "Var":
        self._nodes.append(_Node(value=value, parents=parents, vjp=vjp))
        return Var(self, len(self._nodes) - 1)

    def backward(self, loss: "Var", wrt: Sequence["Var"] | None = None) -> list[Array]:
        """Adjoints of scalar *loss* for each of *wrt*; the tape is cleared afterwards."""
        if loss.tape is not self:
            raise ShapeError("loss was not recorded on this tape")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be scalar, got shape {loss.value.shape}")

        adjoints: list[Array | None] = [None] * (loss.index + 1)
        adjoints[loss.index] = np.ones_like(loss.value)
        for i in range(loss.index, -1, -1):
            g = adjoints[i]
            node = self._nodes[i]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                prev = adjoints[parent]
                adjoints[parent] = pg if prev is None else prev + pg

        out: list[Array] = []
        for v in wrt or []:
            g = adjoints[v.index] if v.index < len(adjoints) else None
            out.append(np.zeros_like(v.value) if g is None else g)
        self.reset()
        return out

    def reset(self) -> None:
        self._nodes.clear()


class Var:
    """Handle to one tape node."""

    __slots__ = ("tape", "index")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, tape: Tape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self) -> Array:
        return self.tape._nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, index={self.index})"

    def __add__(self, other: Any) -> "Var":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Any) -> "Var":
        return add(self, neg(other))

    def __rsub__(self, other: Any) -> "Var":
        return add(neg(self), other)

    def __mul__(self, other: Any) -> "Var":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> "Var":
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other: Any) -> "Var":
        return mul(power(self, -1.0), other)

    def __neg__(self) -> "Var":
        return neg(self)

    def __pow__(self, exponent: float) -> "Var":
        return power(self, exponent)

    def __matmul__(self, other: Any) -> "Var":
        return matmul(self, other)

    def __rmatmul__(self, other: Any) -> "Var":
        return matmul(other, self)

    def __getitem__(self, key: Any) -> "Var":
        return index(self, key)


def value_of(x: Any) -> Any:
    return x.value if isinstance(x, Var) else x


def _tape_of(*xs: Any) -> Tape | None:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ShapeError("operands recorded on different tapes")
            tape = x.tape
    return tape


def _binary(
    a: Any, b: Any, out: Array,
    ga: Callable[[Array], Array], gb: Callable[[Array], Array],
) -> Var:
    tape = _tape_of(a, b)
    assert tape is not None
    parents: list[int] = []
    fns: list[Callable[[Array], Array]] = []
    if isinstance(a, Var):
        parents.append(a.index)
        fns.append(ga)
    if isinstance(b, Var):
        parents.append(b.index)
        fns.append(gb)
    return tape._push(out, tuple(parents), lambda g: tuple(f(g) for f in fns))


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a: Any, b: Any) -> Any:
    if _tape_of(a, b) is None:
        return a + b
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    return _binary(
        a, b, av + bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    )


def mul(a: Any, b: Any) -> Any:
    if _tape_of(a, b) is None:
        return a * b
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    return _binary(
        a, b, av * bv,
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    )


def neg(a: Any) -> Any:
    if not isinstance(a, Var):
        return -a
    return a.tape._push(-a.value, (a.index,), lambda g: (-g,))


def power(a: Any, exponent: float) -> Any:
    """``a ** exponent`` for a constant exponent."""
    if not isinstance(a, Var):
        return np.asarray(a, dtype=np.float64) ** exponent if not np.isscalar(a) else a ** exponent
    av = a.value
    out = av ** exponent
    return a.tape._push(out, (a.index,), lambda g: (g * exponent * av ** (exponent - 1.0),))


def matmul(a: Any, b: Any) -> Any:
    if _tape_of(a, b) is None:
        return a @ b
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shapes {av.shape} @ {bv.shape}")
    return _binary(a, b, av @ bv, lambda g: g @ bv.T, lambda g: av.T @ g)


def sigmoid(a: Any) -> Any:
    av = np.asarray(value_of(a), dtype=np.float64)
    out = 0.5 * (np.tanh(0.5 * av) + 1.0)
    if not isinstance(a, Var):
        return out
    return a.tape._push(out, (a.index,), lambda g: (g * out * (1.0 - out),))


def tanh(a: Any) -> Any:
    out = np.tanh(value_of(a))
    if not isinstance(a, Var):
        return out
    return a.tape._push(out, (a.index,), lambda g: (g * (1.0 - out * out),))


def exp(a: Any) -> Any:
    out = np.exp(value_of(a))
    if not isinstance(a, Var):
        return out
    return a.tape._push(out, (a.index,), lambda g: (g * out,))


def log(a: Any) -> Any:
    av = value_of(a)
    out = np.log(av)
    if not isinstance(a, Var):
        return out
    return a.tape._push(out, (a.index,), lambda g: (g / av,))


def sqrt(a: Any) -> Any:
    return power(a, 0.5)


def relu(a: Any) -> Any:
    """``max(0, a)``; gradient 0 at the kink."""
    av = np.asarray(value_of(a), dtype=np.float64)
    out = np.maximum(av, 0.0)
    if not isinstance(a, Var):
        return out if out.ndim else float(out)
    mask = (av > 0.0).astype(np.float64)
    return a.tape._push(out, (a.index,), lambda g: (g * mask,))


def maximum(a: Any, b: Any) -> Any:
    return add(relu(add(a, neg(b))), b)


def sum(a: Any, axis: int | None = None, keepdims: bool = False) -> Any:  # noqa: A001
    av = np.asarray(value_of(a))
    out = av.sum(axis=axis, keepdims=keepdims)
    if not isinstance(a, Var):
        return out
    shape = av.shape

    def vjp(g: Array) -> tuple[Array]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape._push(np.asarray(out), (a.index,), vjp)


def mean(a: Any, axis: int | None = None, keepdims: bool = False) -> Any:
    av = np.asarray(value_of(a))
    n = av.size if axis is None else av.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def index(a: Any, key: Any) -> Any:
    if not isinstance(a, Var):
        return a[key]
    av = a.value
    out = np.array(av[key])

    def vjp(g: Array) -> tuple[Array]:
        full = np.zeros_like(av)
        np.add.at(full, key, g)
        return (full,)

    return a.tape._push(out, (a.index,), vjp)


def reshape(a: Any, shape: tuple[int, ...]) -> Any:
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.value.shape
    return a.tape._push(a.value.reshape(shape), (a.index,), lambda g: (g.reshape(old),))


def stack(items: Sequence[Any], axis: int = 0) -> Any:
    tape = _tape_of(*items)
    values = [np.asarray(value_of(x), dtype=np.float64) for x in items]
    out = np.stack(values, axis=axis)
    if tape is None:
        return out
    var_pos = [i for i, x in enumerate(items) if isinstance(x, Var)]

    def vjp(g: Array) -> tuple[Array, ...]:
        return tuple(np.take(g, i, axis=axis) for i in var_pos)

    return tape._push(out, tuple(items[i].index for i in var_pos), vjp)


def softmax(logits: Any, axis: int = -1) -> Any:
    """Row softmax; the row max is subtracted as a constant."""
    shift = np.max(value_of(logits), axis=axis, keepdims=True)
    e = exp(add(logits, -shift))
    return mul(e, power(sum(e, axis=axis, keepdims=True), -1.0))
