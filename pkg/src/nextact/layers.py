"""Recurrent cells, linear heads, dropout and cross-entropy.

Cells and heads are plain parameter containers (numpy arrays).  To take part
in a forward pass they are bound to a graph (``bind``), which wraps every
array in a leaf tensor; the step functions then record one fused tape node
per step, backed by the selected kernel backend.

Reference cell conventions (fixed here, since they are a design choice):

GRU:   z = sigmoid(x Wz + h Uz + bz)
       r = sigmoid(x Wr + h Ur + br)
       hbar = tanh(x Wh + (r*h) Uh + bh)
       h' = (1-z)*h + z*hbar

LSTM:  i/f/o = sigmoid(x W· + h U· + b·),  g = tanh(x Wg + h Ug + bg)
       c' = f*c + i*g,  h' = o * tanh(c')

With all parameters zero, a GRU step halves the hidden state exactly
(z = 1/2, hbar = 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Graph, Tensor
from .backend import kernels as K
from .errors import ParameterError, ShapeError

__all__ = [
    "GruCell",
    "LstmCell",
    "LinearHead",
    "gru_step",
    "lstm_step",
    "linear",
    "dropout",
    "cross_entropy",
    "uniform_init",
]

LOG_CLAMP = 1e-12


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; scale-stable for gates."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


_BLOCKS = ("w", "u", "b")


@dataclass
class GruCell:
    """Gate weights packed as blocks (gate order: update z, reset r, candidate h).

    ``w``:(3, input, hidden), ``u``:(3, hidden, hidden), ``b``:(3, hidden);
    per-gate views are exposed as properties (w_z, u_r, ...).
    """

    input_dim: int
    hidden_dim: int
    w: np.ndarray
    u: np.ndarray
    b: np.ndarray

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GruCell":
        return cls(
            input_dim,
            hidden_dim,
            uniform_init(rng, input_dim, (3, input_dim, hidden_dim)),
            uniform_init(rng, hidden_dim, (3, hidden_dim, hidden_dim)),
            np.zeros((3, hidden_dim)),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "GruCell":
        return cls(
            input_dim,
            hidden_dim,
            np.zeros((3, input_dim, hidden_dim)),
            np.zeros((3, hidden_dim, hidden_dim)),
            np.zeros((3, hidden_dim)),
        )

    w_z = property(lambda self: self.w[0])
    w_r = property(lambda self: self.w[1])
    w_h = property(lambda self: self.w[2])
    u_z = property(lambda self: self.u[0])
    u_r = property(lambda self: self.u[1])
    u_h = property(lambda self: self.u[2])
    b_z = property(lambda self: self.b[0])
    b_r = property(lambda self: self.b[1])
    b_h = property(lambda self: self.b[2])

    def named_arrays(self, prefix: str):
        return [(f"{prefix}.{f}", getattr(self, f)) for f in _BLOCKS]

    def bind(self, graph: Graph) -> "BoundGru":
        leaves = tuple(graph.tensor(getattr(self, f)) for f in _BLOCKS)
        return BoundGru(self.input_dim, self.hidden_dim, leaves,
                        tuple(t.values for t in leaves))


@dataclass
class BoundGru:
    input_dim: int
    hidden_dim: int
    leaves: tuple  # order: _BLOCKS
    values: tuple


@dataclass
class LstmCell:
    """Gate blocks in order: input i, forget f, output o, candidate g."""

    input_dim: int
    hidden_dim: int
    w: np.ndarray
    u: np.ndarray
    b: np.ndarray

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "LstmCell":
        return cls(
            input_dim,
            hidden_dim,
            uniform_init(rng, input_dim, (4, input_dim, hidden_dim)),
            uniform_init(rng, hidden_dim, (4, hidden_dim, hidden_dim)),
            np.zeros((4, hidden_dim)),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmCell":
        return cls(
            input_dim,
            hidden_dim,
            np.zeros((4, input_dim, hidden_dim)),
            np.zeros((4, hidden_dim, hidden_dim)),
            np.zeros((4, hidden_dim)),
        )

    w_i = property(lambda self: self.w[0])
    w_f = property(lambda self: self.w[1])
    w_o = property(lambda self: self.w[2])
    w_g = property(lambda self: self.w[3])
    u_i = property(lambda self: self.u[0])
    u_f = property(lambda self: self.u[1])
    u_o = property(lambda self: self.u[2])
    u_g = property(lambda self: self.u[3])
    b_i = property(lambda self: self.b[0])
    b_f = property(lambda self: self.b[1])
    b_o = property(lambda self: self.b[2])
    b_g = property(lambda self: self.b[3])

    def named_arrays(self, prefix: str):
        return [(f"{prefix}.{f}", getattr(self, f)) for f in _BLOCKS]

    def bind(self, graph: Graph) -> "BoundLstm":
        leaves = tuple(graph.tensor(getattr(self, f)) for f in _BLOCKS)
        return BoundLstm(self.input_dim, self.hidden_dim, leaves,
                         tuple(t.values for t in leaves))


@dataclass
class BoundLstm:
    input_dim: int
    hidden_dim: int
    leaves: tuple  # order: _BLOCKS
    values: tuple


@dataclass
class LinearHead:
    in_dim: int
    out_dim: int
    w: np.ndarray
    b: np.ndarray

    @classmethod
    def create(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearHead":
        return cls(in_dim, out_dim, uniform_init(rng, in_dim, (in_dim, out_dim)), np.zeros(out_dim))

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int) -> "LinearHead":
        return cls(in_dim, out_dim, np.zeros((in_dim, out_dim)), np.zeros(out_dim))

    def named_arrays(self, prefix: str):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]

    def bind(self, graph: Graph) -> "BoundLinear":
        return BoundLinear(self.in_dim, self.out_dim, graph.tensor(self.w), graph.tensor(self.b))


@dataclass
class BoundLinear:
    in_dim: int
    out_dim: int
    w: Tensor
    b: Tensor


def gru_step(cell: BoundGru, x: Tensor, h_prev: Tensor) -> Tensor:
    """One fused GRU step; records a single tape node with hand-derived adjoints."""
    if x.values.shape != (cell.input_dim,):
        raise ShapeError(f"gru_step: input shape {x.values.shape} != ({cell.input_dim},)")
    if h_prev.values.shape != (cell.hidden_dim,):
        raise ShapeError(f"gru_step: state shape {h_prev.values.shape} != ({cell.hidden_dim},)")
    g = x.graph
    lw, lu, lb = cell.leaves
    wv, uv, bv = cell.values
    h_new, z, r, hbar = K.gru_forward(x.values, h_prev.values, wv, uv, bv)
    out = g.emit("gru_step", (x, h_prev, lw, lu, lb), h_new, None)

    def backprop():
        K.gru_backward(
            out.grad, x.values, h_prev.values, wv, uv, z, r, hbar,
            x.grad, h_prev.grad, lw.grad, lu.grad, lb.grad,
        )

    g._records[-1].backprop = backprop
    return out


def lstm_step(cell: BoundLstm, x: Tensor, h_prev: Tensor, c_prev: Tensor):
    """One fused LSTM step; returns (h, c).

    Both outputs live on the tape; the single record's backward reads the
    accumulated gradients of both (consumers of c appear later on the tape,
    so they run first in the reverse sweep).
    """
    if x.values.shape != (cell.input_dim,):
        raise ShapeError(f"lstm_step: input shape {x.values.shape} != ({cell.input_dim},)")
    if h_prev.values.shape != (cell.hidden_dim,) or c_prev.values.shape != (cell.hidden_dim,):
        raise ShapeError("lstm_step: state shapes do not match the cell dimension")
    g = x.graph
    lw, lu, lb = cell.leaves
    wv, uv, bv = cell.values
    h_new, c_new, i, f, o, gc, tc = K.lstm_forward(x.values, h_prev.values, c_prev.values, wv, uv, bv)
    c_out = g.tensor(c_new)
    out = g.emit("lstm_step", (x, h_prev, c_prev, lw, lu, lb), h_new, None)

    def backprop():
        K.lstm_backward(
            out.grad, c_out.grad, x.values, h_prev.values, c_prev.values,
            wv, uv, i, f, o, gc, tc,
            x.grad, h_prev.grad, c_prev.grad, lw.grad, lu.grad, lb.grad,
        )

    g._records[-1].backprop = backprop
    return out, c_out


def linear(head: BoundLinear, x: Tensor) -> Tensor:
    if x.values.shape != (head.in_dim,):
        raise ShapeError(f"linear: input shape {x.values.shape} != ({head.in_dim},)")
    return ad.add(ad.matmul(x, head.w), head.b)


def dropout(x: Tensor, ratio: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the exact identity (same tensor) when inactive."""
    if not 0.0 <= ratio < 1.0:
        raise ParameterError(f"dropout ratio must be in [0, 1), got {ratio}")
    if not training or ratio == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode requires an RNG")
    g = x.graph
    keep = rng.random(x.values.shape) >= ratio
    mask = keep / (1.0 - ratio)
    out = g.emit("dropout", (x,), x.values * mask, None)

    def backprop():
        x.grad += out.grad * mask

    g._records[-1].backprop = backprop
    return out


def cross_entropy(probs: Tensor, label: int) -> Tensor:
    """-log(probs[label]), input clamped at 1e-12 before the log."""
    if probs.values.ndim != 1:
        raise ShapeError(f"cross_entropy expects a rank-1 distribution, got {probs.shape}")
    n = probs.values.shape[0]
    label = int(label)
    if not 0 <= label < n:
        raise IndexError(f"cross_entropy: label {label} out of range for {n} classes")
    g = probs.graph
    p = float(probs.values[label])
    clamped = max(p, LOG_CLAMP)
    out = g.emit("cross_entropy", (probs,), np.asarray(-np.log(clamped)), None)

    def backprop():
        # Inside the clamp region the loss is locally constant in probs[label].
        if p > LOG_CLAMP:
            probs.grad[label] += -float(out.grad) / clamped

    g._records[-1].backprop = backprop
    return out
