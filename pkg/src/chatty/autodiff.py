"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D ``numpy.ndarray``. Graphs are rebuilt per minibatch on a
:class:`Tape`; nodes are appended in creation order, so walking the tape
backwards is a valid topological order.

    tape = Tape()
    w = tape.leaf(np.ones((2, 2)), name="w")
    loss = sum_all(w)
    grads = backward(loss)      # {"w": array([[1., 1.], [1., 1.]])}
"""

from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from .errors import DomainError, ParameterError, ShapeError, StateError

__all__ = [
    "Node", "Tape", "backward",
    "matmul", "transpose", "add", "sub", "mul", "div", "neg", "scale",
    "abs_", "exp", "log", "sqrt", "relu", "sigmoid", "clip",
    "sum_all", "trace", "row_sum", "col_sum", "mean",
    "softmax_rows", "log_softmax_rows", "concat_rows", "grad_reverse",
    "elementwise", "reduce",
]


def _as_matrix(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    # Sum the upstream gradient over axes that were broadcast from size 1.
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


class Node:
    """A graph vertex: a value, its accumulated gradient and backward wiring."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "tape", "name", "requires_grad")

    def __init__(self, value, tape: "Tape", parents=(), backward_fn=None, op="leaf",
                 name=None, requires_grad=None):
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.backward_fn: Optional[Callable[[np.ndarray], None]] = backward_fn
        self.op = op
        self.tape = tape
        self.name = name
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"

    # operator sugar; the functional API below is the canonical one
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of the nodes built for one forward pass.

    ``seed`` feeds :attr:`rng`, the generator any stochastic op must draw from,
    so replaying a forward with the same seed and inputs is bit-identical.
    """

    def __init__(self, seed: Optional[int] = None):
        self.nodes: list[Node] = []
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.backward_done = False

    def leaf(self, value, name: Optional[str] = None, requires_grad: bool = True) -> Node:
        return Node(_as_matrix(value), self, name=name, requires_grad=requires_grad)

    def constant(self, value, name: Optional[str] = None) -> Node:
        return Node(_as_matrix(value), self, name=name, requires_grad=False, op="const")

    def leaves(self) -> list[Node]:
        return [n for n in self.nodes if n.op == "leaf" and n.requires_grad]

    def reset(self) -> None:
        """Clear all gradients so :func:`backward` may run again."""
        for n in self.nodes:
            n.grad = None
        self.backward_done = False


def _tape_of(*xs) -> Tape:
    tape = None
    for x in xs:
        if isinstance(x, Node):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise StateError("nodes from different tapes cannot be combined")
    if tape is None:
        raise StateError("at least one operand must be a Node")
    return tape


def _lift(x, tape: Tape) -> Node:
    if isinstance(x, Node):
        return x
    return tape.constant(x)


def backward(loss: Node) -> Dict[str, np.ndarray]:
    """Backpropagate from a 1x1 ``loss``; return ``{leaf name: gradient}``.

    Leaves that the loss does not depend on get a zero gradient. Unnamed
    leaves are keyed by their position in the tape.
    """
    if loss.value.shape != (1, 1):
        raise ShapeError(f"backward needs a 1x1 loss, got shape {loss.value.shape}")
    tape = loss.tape
    if tape.backward_done:
        raise StateError("backward already ran on this tape; call tape.reset() first")
    tape.backward_done = True
    loss.grad = np.ones((1, 1))
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None:
            continue
        node.backward_fn(node.grad)
    out = {}
    for i, leaf in enumerate(tape.leaves()):
        key = leaf.name if leaf.name is not None else f"leaf{i}"
        out[key] = np.array(leaf.grad) if leaf.grad is not None else np.zeros_like(leaf.value)
    return out


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    av, bv = a.value, b.value

    def bw(g):
        if a.requires_grad:
            a.accumulate(g @ bv.T)
        if b.requires_grad:
            b.accumulate(av.T @ g)

    return Node(av @ bv, tape, (a, b), bw, "matmul")


def transpose(x: Node) -> Node:
    def bw(g):
        x.accumulate(g.T)

    return Node(x.value.T, x.tape, (x,), bw, "transpose")


def concat_rows(*xs: Node) -> Node:
    """Stack nodes vertically (all must share a column count)."""
    tape = _tape_of(*xs)
    xs = tuple(_lift(x, tape) for x in xs)
    cols = {x.value.shape[1] for x in xs}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows column mismatch: {[x.value.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.value.shape[0] for x in xs])

    def bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            x.accumulate(g[lo:hi])

    return Node(np.vstack([x.value for x in xs]), tape, xs, bw, "concat_rows")


# ---------------------------------------------------------------- elementwise

def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("add", a.value, b.value)

    def bw(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(g, b.value.shape))

    return Node(a.value + b.value, tape, (a, b), bw, "add")


def sub(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("sub", a.value, b.value)

    def bw(g):
        a.accumulate(_unbroadcast(g, a.value.shape))
        b.accumulate(_unbroadcast(-g, b.value.shape))

    return Node(a.value - b.value, tape, (a, b), bw, "sub")


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("mul", a.value, b.value)
    av, bv = a.value, b.value

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * bv, av.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * av, bv.shape))

    return Node(av * bv, tape, (a, b), bw, "mul")


def div(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    _check_broadcast("div", a.value, b.value)
    av, bv = a.value, b.value
    out = av / bv

    def bw(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g / bv, av.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g * out / bv, bv.shape))

    return Node(out, tape, (a, b), bw, "div")


def scale(x: Node, k: float) -> Node:
    """Multiply by a plain Python scalar."""
    k = float(k)

    def bw(g):
        x.accumulate(g * k)

    return Node(x.value * k, x.tape, (x,), bw, "scale")


def neg(x: Node) -> Node:
    def bw(g):
        x.accumulate(-g)

    return Node(-x.value, x.tape, (x,), bw, "neg")


def abs_(x: Node) -> Node:
    s = np.sign(x.value)  # sign(0) = 0

    def bw(g):
        x.accumulate(g * s)

    return Node(np.abs(x.value), x.tape, (x,), bw, "abs")


def exp(x: Node) -> Node:
    out = np.exp(x.value)

    def bw(g):
        x.accumulate(g * out)

    return Node(out, x.tape, (x,), bw, "exp")


def log(x: Node) -> Node:
    if np.any(~(x.value > 0)):
        raise DomainError("log of a non-positive entry")
    xv = x.value

    def bw(g):
        x.accumulate(g / xv)

    return Node(np.log(xv), x.tape, (x,), bw, "log")


def sqrt(x: Node) -> Node:
    if np.any(x.value < 0):
        raise DomainError("sqrt of a negative entry")
    out = np.sqrt(x.value)
    # derivative is unbounded at 0; use 0 there
    inv = np.divide(0.5, out, out=np.zeros_like(out), where=out > 0)

    def bw(g):
        x.accumulate(g * inv)

    return Node(out, x.tape, (x,), bw, "sqrt")


def relu(x: Node) -> Node:
    mask = x.value > 0  # relu'(0) = 0

    def bw(g):
        x.accumulate(g * mask)

    return Node(np.maximum(x.value, 0.0), x.tape, (x,), bw, "relu")


def sigmoid(x: Node) -> Node:
    z = x.value
    # two-branch form avoids overflow in exp for large |z|
    ez = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    def bw(g):
        x.accumulate(g * out * (1.0 - out))

    return Node(out, x.tape, (x,), bw, "sigmoid")


def clip(x: Node, lo: float, hi: float) -> Node:
    """Clamp to ``[lo, hi]``; gradient passes only where the input was inside."""
    inside = (x.value >= lo) & (x.value <= hi)

    def bw(g):
        x.accumulate(g * inside)

    return Node(np.clip(x.value, lo, hi), x.tape, (x,), bw, "clip")


_UNARY = {"neg": neg, "abs": abs_, "exp": exp, "log": log, "relu": relu}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(kind: str, *inputs) -> Node:
    """Dispatch by name: add, sub, mul, neg, abs, exp, log, relu."""
    if kind in _UNARY:
        (x,) = inputs
        return _UNARY[kind](x)
    if kind in _BINARY:
        a, b = inputs
        if isinstance(a, Node) and isinstance(b, Node) and a.value.shape != b.value.shape:
            raise ShapeError(f"{kind} shape mismatch: {a.value.shape} vs {b.value.shape}")
        return _BINARY[kind](a, b)
    raise ParameterError(f"unknown elementwise op {kind!r}")


# ---------------------------------------------------------------- reductions

def sum_all(x: Node) -> Node:
    shape = x.value.shape

    def bw(g):
        x.accumulate(np.full(shape, g[0, 0]))

    return Node(np.array([[x.value.sum()]]), x.tape, (x,), bw, "sum_all")


def trace(x: Node) -> Node:
    r, c = x.value.shape
    if r != c:
        raise ShapeError(f"trace needs a square matrix, got {x.value.shape}")

    def bw(g):
        x.accumulate(np.eye(r) * g[0, 0])

    return Node(np.array([[np.trace(x.value)]]), x.tape, (x,), bw, "trace")


def row_sum(x: Node) -> Node:
    """Sum across columns: ``[B x c] -> [B x 1]``."""
    shape = x.value.shape

    def bw(g):
        x.accumulate(np.broadcast_to(g, shape))

    return Node(x.value.sum(axis=1, keepdims=True), x.tape, (x,), bw, "row_sum")


def col_sum(x: Node) -> Node:
    """Sum down rows: ``[B x c] -> [1 x c]``."""
    shape = x.value.shape

    def bw(g):
        x.accumulate(np.broadcast_to(g, shape))

    return Node(x.value.sum(axis=0, keepdims=True), x.tape, (x,), bw, "col_sum")


def mean(x: Node) -> Node:
    shape = x.value.shape
    n = x.value.size

    def bw(g):
        x.accumulate(np.full(shape, g[0, 0] / n))

    return Node(np.array([[x.value.mean()]]), x.tape, (x,), bw, "mean")


_REDUCE = {"sum-all": sum_all, "trace": trace, "row-sum": row_sum, "mean": mean}


def reduce(kind: str, x: Node) -> Node:
    """Dispatch by name: sum-all, trace, row-sum, mean."""
    try:
        return _REDUCE[kind](x)
    except KeyError:
        raise ParameterError(f"unknown reduction {kind!r}") from None


# ---------------------------------------------------------------- composites

def softmax_rows(z: Node, temperature: float = 1.0) -> Node:
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    t = float(temperature)
    s = z.value / t
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * p).sum(axis=1, keepdims=True)
        z.accumulate(p * (g - inner) / t)

    return Node(p, z.tape, (z,), bw, "softmax_rows")


def log_softmax_rows(z: Node, temperature: float = 1.0) -> Node:
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")
    t = float(temperature)
    s = z.value / t
    s = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    out = s - lse
    p = np.exp(out)

    def bw(g):
        z.accumulate((g - p * g.sum(axis=1, keepdims=True)) / t)

    return Node(out, z.tape, (z,), bw, "log_softmax_rows")


def grad_reverse(x: Node, scale: float = 1.0) -> Node:
    """Identity forward; backward multiplies the incoming gradient by ``-scale``."""
    k = -float(scale)

    def bw(g):
        x.accumulate(g * k)

    return Node(x.value, x.tape, (x,), bw, "grad_reverse")
