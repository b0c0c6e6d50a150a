"""Minimal dense-tensor reverse-mode automatic differentiation.

Design:

* float64 everywhere; no implicit broadcasting (the single exception is
  ``scale``, which multiplies by a Python scalar).
* Define-by-run: a fresh :class:`Graph` is built per forward pass, so
  data-dependent control flow (recursive rollouts of varying length) needs no
  special handling.  Each op appends one :class:`Record` to the tape; since
  outputs are created after their inputs, the tape is already in topological
  order and the backward pass is a single reverse sweep.
* Gradients accumulate additively when a tensor feeds several ops.
  ``Graph.backward`` (re)initializes every gradient buffer, so calling it
  twice on the same graph is idempotent and bit-deterministic.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, GraphError, NumericError, ShapeError

__all__ = [
    "Tensor",
    "Record",
    "Graph",
    "matmul",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "scale",
    "concat",
    "dot",
    "softmax",
    "total",
    "mean_stack",
    "max_stack",
    "backward",
]


class Tensor:
    """Dense float64 array bound to exactly one computation graph.

    ``grad`` is None until the owning graph's backward pass allocates it;
    afterwards it has the same shape as ``values``.
    """

    __slots__ = ("graph", "values", "grad", "node_id")

    def __init__(self, graph: "Graph", values: np.ndarray, node_id: int):
        self.graph = graph
        self.values = values
        self.grad = None
        self.node_id = node_id

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        if self.values.shape != ():
            raise ShapeError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.values)

    def __repr__(self):
        return f"Tensor(id={self.node_id}, shape={self.shape})"


class Record:
    """One executed operation on the tape.

    ``backprop`` is a zero-argument closure that reads the captured output
    tensors' ``grad`` buffers and accumulates into the captured inputs'.
    """

    __slots__ = ("op", "input_ids", "output_id", "backprop")

    def __init__(self, op: str, input_ids, output_id: int, backprop):
        self.op = op
        self.input_ids = input_ids
        self.output_id = output_id
        self.backprop = backprop


class Graph:
    """Tape of tensors and operation records for one forward pass."""

    __slots__ = ("_tensors", "_records")

    def __init__(self):
        self._tensors: list[Tensor] = []
        self._records: list[Record] = []

    def tensor(self, values) -> Tensor:
        """Register a leaf tensor (no producing record)."""
        if type(values) is not np.ndarray or values.dtype != np.float64:
            values = np.asarray(values, dtype=np.float64)
        t = Tensor(self, values, len(self._tensors))
        self._tensors.append(t)
        return t

    def emit(self, op: str, inputs, values, backprop) -> Tensor:
        """Register an op output plus its tape record."""
        out = self.tensor(values)
        self._records.append(
            Record(op, tuple(t.node_id for t in inputs), out.node_id, backprop)
        )
        return out

    @property
    def n_tensors(self) -> int:
        return len(self._tensors)

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` of every tensor reachable from ``loss``.

        Unreachable tensors end up with an exactly-zero gradient buffer.
        """
        if loss.graph is not self:
            raise GraphError("loss tensor belongs to a different graph")
        if loss.values.shape != ():
            raise ShapeError(
                f"backward requires a scalar root, got shape {loss.values.shape}"
            )
        for t in self._tensors:
            t.grad = np.zeros(t.values.shape)
        loss.grad[...] = 1.0
        for rec in reversed(self._records):
            rec.backprop()


def backward(loss: Tensor) -> None:
    loss.graph.backward(loss)


def _graph_of(*tensors: Tensor) -> Graph:
    g = tensors[0].graph
    for t in tensors[1:]:
        if t.graph is not g:
            raise GraphError("operands belong to different graphs")
    return g


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; rank-1 operands follow the usual vec@mat / mat@vec rules."""
    g = _graph_of(a, b)
    av, bv = a.values, b.values
    ra, rb = av.ndim, bv.ndim
    if ra not in (1, 2) or rb not in (1, 2) or (ra == 1 and rb == 1):
        raise ShapeError(
            f"matmul supports mat@mat, vec@mat and mat@vec; got shapes {av.shape} and {bv.shape}"
        )
    inner_a = av.shape[-1]
    inner_b = bv.shape[0]
    if inner_a != inner_b:
        raise ShapeError(
            f"matmul: inner dimensions disagree for shapes {av.shape} and {bv.shape}"
        )
    out = g.emit("matmul", (a, b), av @ bv, None)

    def backprop():
        og = out.grad
        if ra == 2 and rb == 2:
            a.grad += og @ bv.T
            b.grad += av.T @ og
        elif ra == 1:  # vec @ mat -> vec
            a.grad += bv @ og
            b.grad += np.outer(av, og)
        else:  # mat @ vec -> vec
            a.grad += np.outer(og, bv)
            b.grad += av.T @ og

    g._records[-1].backprop = backprop
    return out


def _binary(op: str, a: Tensor, b: Tensor, values, backprop_factory) -> Tensor:
    g = _graph_of(a, b)
    if a.values.shape != b.values.shape:
        raise ShapeError(
            f"{op}: shapes must match exactly, got {a.values.shape} and {b.values.shape}"
        )
    out = g.emit(op, (a, b), values, None)
    g._records[-1].backprop = backprop_factory(out)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backprop():
            a.grad += out.grad
            b.grad += out.grad

        return backprop

    return _binary("add", a, b, a.values + b.values, factory)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backprop():
            a.grad += out.grad
            b.grad -= out.grad

        return backprop

    return _binary("sub", a, b, a.values - b.values, factory)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def factory(out):
        def backprop():
            a.grad += out.grad * b.values
            b.grad += out.grad * a.values

        return backprop

    return _binary("mul", a, b, a.values * b.values, factory)


def _unary(op: str, a: Tensor, values, backprop_factory) -> Tensor:
    g = a.graph
    out = g.emit(op, (a,), values, None)
    g._records[-1].backprop = backprop_factory(out)
    return out


def sigmoid(a: Tensor) -> Tensor:
    # tanh form is overflow-free and exact at 0.
    y = 0.5 * (1.0 + np.tanh(0.5 * a.values))

    def factory(out):
        def backprop():
            a.grad += out.grad * out.values * (1.0 - out.values)

        return backprop

    return _unary("sigmoid", a, y, factory)


def tanh(a: Tensor) -> Tensor:
    def factory(out):
        def backprop():
            a.grad += out.grad * (1.0 - out.values * out.values)

        return backprop

    return _unary("tanh", a, np.tanh(a.values), factory)


def exp(a: Tensor) -> Tensor:
    def factory(out):
        def backprop():
            a.grad += out.grad * out.values

        return backprop

    return _unary("exp", a, np.exp(a.values), factory)


def log(a: Tensor) -> Tensor:
    bad = np.flatnonzero(a.values <= 0.0)
    if bad.size:
        raise DomainError(
            f"log: non-positive value {a.values.flat[bad[0]]!r} at flat index {int(bad[0])}"
        )

    def factory(out):
        def backprop():
            a.grad += out.grad / a.values

        return backprop

    return _unary("log", a, np.log(a.values), factory)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar (the only permitted broadcast)."""
    c = float(c)

    def factory(out):
        def backprop():
            a.grad += out.grad * c

        return backprop

    return _unary("scale", a, a.values * c, factory)


def concat(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ShapeError(
            f"concat requires rank-1 operands, got shapes {a.values.shape} and {b.values.shape}"
        )
    p = a.values.shape[0]
    out = g.emit("concat", (a, b), np.concatenate([a.values, b.values]), None)

    def backprop():
        a.grad += out.grad[:p]
        b.grad += out.grad[p:]

    g._records[-1].backprop = backprop
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    g = _graph_of(a, b)
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ShapeError("dot requires rank-1 operands")
    if a.values.shape != b.values.shape:
        raise ShapeError(
            f"dot: lengths disagree ({a.values.shape[0]} vs {b.values.shape[0]})"
        )
    out = g.emit("dot", (a, b), np.asarray(a.values @ b.values), None)

    def backprop():
        og = out.grad  # 0-d
        a.grad += og * b.values
        b.grad += og * a.values

    g._records[-1].backprop = backprop
    return out


def softmax(z: Tensor) -> Tensor:
    if z.values.ndim != 1 or z.values.shape[0] < 1:
        raise ShapeError(f"softmax requires a nonempty rank-1 tensor, got {z.shape}")
    if np.isnan(z.values).any():
        raise NumericError("softmax: NaN in input")
    shifted = z.values - z.values.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def factory(out):
        def backprop():
            og = out.grad
            yv = out.values
            z.grad += yv * (og - np.dot(og, yv))

        return backprop

    return _unary("softmax", z, y, factory)


def total(a: Tensor) -> Tensor:
    """Sum of all entries (scalar); handy for reductions in tests and losses."""
    g = a.graph
    out = g.emit("total", (a,), np.asarray(a.values.sum()), None)

    def backprop():
        a.grad += out.grad

    g._records[-1].backprop = backprop
    return out


def _check_stack(tensors) -> Graph:
    if not tensors:
        raise ShapeError("stack reduction over an empty tensor list")
    g = _graph_of(*tensors)
    shape = tensors[0].values.shape
    if len(shape) != 1:
        raise ShapeError("stack reductions require rank-1 tensors")
    for t in tensors:
        if t.values.shape != shape:
            raise ShapeError(
                f"stack reduction: mixed shapes {shape} and {t.values.shape}"
            )
    return g


def mean_stack(tensors) -> Tensor:
    """Elementwise mean of same-length vectors (ordered accumulation)."""
    tensors = list(tensors)
    g = _check_stack(tensors)
    acc = tensors[0].values.copy()
    for t in tensors[1:]:
        acc += t.values
    n = len(tensors)
    acc /= n
    out = g.emit("mean_stack", tensors, acc, None)

    def backprop():
        share = out.grad / n
        for t in tensors:
            t.grad += share

    g._records[-1].backprop = backprop
    return out


def max_stack(tensors) -> Tensor:
    """Elementwise max of same-length vectors; ties go to the earliest input."""
    tensors = list(tensors)
    g = _check_stack(tensors)
    stacked = np.stack([t.values for t in tensors])
    winner = np.argmax(stacked, axis=0)  # first max wins
    cols = np.arange(stacked.shape[1])
    out = g.emit("max_stack", tensors, stacked[winner, cols], None)

    def backprop():
        for j, t in enumerate(tensors):
            mask = winner == j
            if mask.any():
                t.grad[mask] += out.grad[mask]

    g._records[-1].backprop = backprop
    return out
