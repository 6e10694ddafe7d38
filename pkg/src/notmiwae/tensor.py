"""Minimal dense tensors with reverse-mode automatic differentiation.

Every operation whose inputs require gradients appends a node to a single
module-level tape. ``backward`` walks the tape in reverse append order,
accumulates gradients into leaf tensors and then clears the tape, so each
forward pass can be differentiated exactly once.

Values are float64 numpy arrays. Binary operations broadcast numpy-style;
the backward pass sums gradients over broadcast axes.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Tape",
    "BroadcastError",
    "StaleGraphError",
    "tensor",
    "constant",
    "get_tape",
    "no_grad",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "exp",
    "log",
    "tanh",
    "relu",
    "sigmoid",
    "softplus",
    "square",
    "neg",
    "matmul",
    "reduce",
    "sum",
    "mean",
    "logsumexp",
    "reshape",
    "expand_dims",
    "where_mask",
    "backward",
]


class BroadcastError(ValueError):
    pass


class StaleGraphError(RuntimeError):
    """Raised when backward is called on a graph that was already consumed."""


@dataclass
class _Node:
    out: "Tensor"
    parents: tuple["Tensor", ...]
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[_Node] = field(default_factory=list)
    generation: int = 0
    enabled: bool = True

    def record(self, out: "Tensor", parents: tuple["Tensor", ...], backward_fn) -> None:
        out._node = _Node(out, parents, backward_fn)
        out._generation = self.generation
        self.nodes.append(out._node)

    def reset(self) -> None:
        self.nodes.clear()
        self.generation += 1


_TAPE = Tape()


def get_tape() -> Tape:
    return _TAPE


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate operations without recording them (inference only)."""
    prev = _TAPE.enabled
    _TAPE.enabled = False
    try:
        yield
    finally:
        _TAPE.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "_generation", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: _Node | None = None
        self._generation = -1
        self.name = name

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
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _TAPE.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPE.record(out, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(fn, a: Tensor, b: Tensor) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise BroadcastError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return _result(_binary(np.add, a, b), (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return _result(_binary(np.subtract, a, b), (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    ad, bd = a.data, b.data
    return _result(
        _binary(np.multiply, a, b),
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    ad, bd = a.data, b.data
    out = _binary(np.divide, a, b)

    def bw(g):
        ga = g / bd
        return _unbroadcast(ga, ad.shape), _unbroadcast(-ga * out, bd.shape)

    return _result(out, (a, b), bw)


def neg(a) -> Tensor:
    a = constant(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _result(np.log(ad), (a,), lambda g: (g / ad,))


def tanh(a) -> Tensor:
    a = constant(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = constant(a)
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def sigmoid(a) -> Tensor:
    a = constant(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _result(np.logaddexp(0.0, ad), (a,), lambda g: (g * expit(ad),))


def square(a) -> Tensor:
    a = constant(a)
    ad = a.data
    return _result(ad * ad, (a,), lambda g: (2.0 * g * ad,))


_UNARY = {
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "square": square,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def where_mask(mask: np.ndarray, a, b) -> Tensor:
    """``mask * a + (1 - mask) * b`` for a constant 0/1 mask, as one node."""
    a, b = constant(a), constant(b)
    m = np.asarray(mask, dtype=np.float64)
    out = m * a.data + (1.0 - m) * b.data
    sa, sb = a.shape, b.shape
    return _result(out, (a, b), lambda g: (_unbroadcast(g * m, sa), _unbroadcast(g * (1.0 - m), sb)))


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., m, k) and a matrix ``b`` of shape (k, n)."""
    a, b = constant(a), constant(b)
    if b.ndim != 2 or a.ndim < 2:
        raise BroadcastError(f"matmul expects (..., m, k) @ (k, n), got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise BroadcastError(f"matmul inner dimensions differ: {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(ad @ bd, (a, b), bw)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = constant(a)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def expand_dims(a, axis: int) -> Tensor:
    a = constant(a)
    old = a.shape
    return _result(np.expand_dims(a.data, axis), (a,), lambda g: (g.reshape(old),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _check_axis(a: Tensor, axis) -> None:
    if axis is None:
        if a.size == 0:
            raise ValueError("reduction over an empty tensor")
        return
    if not -a.ndim <= axis < a.ndim:
        raise ValueError(f"axis {axis} out of range for shape {a.shape}")
    if a.shape[axis] == 0:
        raise ValueError(f"reduction over empty axis {axis} of shape {a.shape}")


def _expand_grad(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = constant(a)
    _check_axis(a, axis)
    shape = a.shape
    return _result(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_grad(g, shape, axis, keepdims),),
    )


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    _check_axis(a, axis)
    shape = a.shape
    n = a.size if axis is None else shape[axis]
    return _result(
        a.data.mean(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_grad(g / n, shape, axis, keepdims),),
    )


def _lse(x: np.ndarray, axis, keepdims: bool) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    return out


def logsumexp(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    _check_axis(a, axis)
    ad = a.data
    out_keep = _lse(ad, axis, True)
    out = out_keep if keepdims else (np.squeeze(out_keep, axis=axis) if axis is not None else out_keep.reshape(()))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        with np.errstate(invalid="ignore"):
            soft = np.exp(ad - out_keep)
        soft = np.where(np.isfinite(soft), soft, 0.0)
        return (g * soft,)

    return _result(out, (a,), bw)


def reduce(op_kind: str, a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    if op_kind == "sum":
        return sum(a, axis, keepdims)
    if op_kind == "mean":
        return mean(a, axis, keepdims)
    if op_kind == "logsumexp":
        return logsumexp(a, axis, keepdims)
    raise ValueError(f"unknown reduction {op_kind!r}")


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The tape is cleared afterwards; calling this again on the same graph
    raises ``StaleGraphError``.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StaleGraphError("loss does not require grad (detached tensor)")
    if loss.is_leaf:
        g = np.ones_like(loss.data)
        loss.grad = g if loss.grad is None else loss.grad + g
        return
    tape = _TAPE
    if loss._generation != tape.generation:
        raise StaleGraphError("graph already consumed by a previous backward(); run a new forward pass")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad = np.array(pg, dtype=np.float64) if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    tape.reset()
