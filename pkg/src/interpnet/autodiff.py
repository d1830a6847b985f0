"""Define-by-run reverse-mode automatic differentiation over float64 arrays.

A :class:`Tape` records every operation applied to its :class:`Node` objects in
execution order, so node ids are already a topological order. ``backward``
walks the tape once in reverse.

    tape = Tape()
    w = tape.parameter("w", np.ones((3, 2)))
    x = tape.constant(np.arange(3.0).reshape(1, 3))
    loss = ad.sum(ad.relu(ad.matmul(x, w)))
    grads = ad.backward(tape, loss)      # {"w": array of shape (3, 2)}
"""
from __future__ import annotations

import enum
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class OpKind(str, enum.Enum):
    PARAMETER = "parameter"
    CONSTANT = "constant"
    MATMUL = "matmul"
    ADD = "add"
    MUL = "mul"
    ADD_BIAS = "add_bias"
    RELU = "relu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTMAX = "softmax"
    LOG_SOFTMAX = "log_softmax"
    CONCAT = "concat"
    SLICE = "slice"
    ROW_SELECT = "row_select"
    STOP_GRADIENT = "stop_gradient"
    CROSS_ENTROPY = "cross_entropy"
    WEIGHTED_NLL = "weighted_nll"
    SUM = "sum"
    MEAN = "mean"


def _frozen(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.flags.writeable:
        arr = arr.view()
        arr.flags.writeable = False
    return arr


class Node:
    __slots__ = ("id", "value", "op", "parents", "requires_grad", "tape", "_backward")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray, op: OpKind,
                 parents: tuple[int, ...], requires_grad: bool,
                 backward_fn: Callable | None):
        self.tape = tape
        self.id = id
        self.value = value
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op.value}, shape={self.shape})"


class Tape:
    """Append-only record of nodes plus a name -> node id registry for parameters."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: dict[str, int] = {}

    def __len__(self):
        return len(self.nodes)

    def _append(self, value, op, parents=(), backward_fn=None, requires_grad=None) -> Node:
        if requires_grad is None:
            requires_grad = any(self.nodes[p].requires_grad for p in parents)
        node = Node(self, len(self.nodes), _frozen(value), op, tuple(parents),
                    requires_grad, backward_fn if requires_grad else None)
        self.nodes.append(node)
        return node

    def parameter(self, name: str, value) -> Node:
        if name in self.parameters:
            raise ValueError(f"parameter {name!r} already registered on this tape")
        node = self._append(value, OpKind.PARAMETER, requires_grad=True)
        self.parameters[name] = node.id
        return node

    def constant(self, value) -> Node:
        return self._append(value, OpKind.CONSTANT, requires_grad=False)

    def bind(self, params: dict[str, np.ndarray], prefix: str = "",
             trainable: bool = True) -> dict[str, Node]:
        """Put a whole parameter dict on the tape; returns name -> Node."""
        if trainable:
            return {k: self.parameter(prefix + k, v) for k, v in params.items()}
        return {k: self.constant(v) for k, v in params.items()}


def _same_tape(*nodes: Node) -> Tape:
    tape = nodes[0].tape
    for n in nodes[1:]:
        if n.tape is not tape:
            raise ValueError("operands live on different tapes")
    return tape


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------

def matmul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        return g @ bv.T, av.T @ g

    return tape._append(av @ bv, OpKind.MATMUL, (a.id, b.id), bw)


def add(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return tape._append(a.value + b.value, OpKind.ADD, (a.id, b.id), lambda g: (g, g))


def mul(a: Node, b: Node) -> Node:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return tape._append(av * bv, OpKind.MUL, (a.id, b.id), lambda g: (g * bv, g * av))


def add_bias(a: Node, bias: Node) -> Node:
    """Add a length-n bias vector to every row of an (m, n) matrix."""
    tape = _same_tape(a, bias)
    if a.value.ndim != 2 or bias.value.ndim != 1 or a.shape[1] != bias.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {bias.shape} to rows of {a.shape}")
    return tape._append(a.value + bias.value, OpKind.ADD_BIAS, (a.id, bias.id),
                        lambda g: (g, g.sum(axis=0)))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return a.tape._append(np.where(mask, a.value, 0.0), OpKind.RELU, (a.id,),
                          lambda g: (g * mask,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and saturates to exactly 0/1
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Node) -> Node:
    s = _sigmoid(a.value)
    return a.tape._append(s, OpKind.SIGMOID, (a.id,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    return a.tape._append(t, OpKind.TANH, (a.id,), lambda g: (g * (1.0 - t * t),))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(a: Node) -> Node:
    """Softmax over the last axis (row-wise for matrices)."""
    s = _softmax(a.value)

    def bw(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return a.tape._append(s, OpKind.SOFTMAX, (a.id,), bw)


def log_softmax(a: Node) -> Node:
    out = _log_softmax(a.value)
    s = np.exp(out)

    def bw(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return a.tape._append(out, OpKind.LOG_SOFTMAX, (a.id,), bw)


def concat(parts: Sequence[Node]) -> Node:
    """Concatenate along the last axis: vectors end to end, matrices column-wise."""
    if not parts:
        raise ValueError("concat needs at least one part")
    tape = _same_tape(*parts)
    ndim = parts[0].value.ndim
    if ndim not in (1, 2) or any(p.value.ndim != ndim for p in parts):
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}")
    if ndim == 2 and len({p.shape[0] for p in parts}) > 1:
        raise ShapeError(f"concat: row counts differ {[p.shape for p in parts]}")
    widths = [p.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[..., offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    value = np.concatenate([p.value for p in parts], axis=-1)
    return tape._append(value, OpKind.CONCAT, tuple(p.id for p in parts), bw)


def slice_cols(a: Node, start: int, stop: int) -> Node:
    """a[..., start:stop]."""
    width = a.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return a.tape._append(a.value[..., start:stop], OpKind.SLICE, (a.id,), bw)


def row_select(table: Node, indices) -> Node:
    """Embedding lookup: rows ``table[indices]`` of a (V, d) matrix."""
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    n_rows = table.shape[0]
    if table.value.ndim != 2:
        raise ShapeError(f"row_select: table must be a matrix, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ValueError(f"row_select: index out of range for {n_rows} rows")
    shape = table.shape

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return table.tape._append(table.value[idx], OpKind.ROW_SELECT, (table.id,), bw)


def stop_gradient(a: Node) -> Node:
    """Identity on values; contributes nothing to any ancestor's gradient."""
    return a.tape._append(a.value, OpKind.STOP_GRADIENT, (a.id,), None, requires_grad=False)


def cross_entropy(probs: Node, target) -> Node:
    """-log(max(p[target], 1e-12)); mean over rows when ``probs`` is a matrix."""
    p = probs.value
    if p.ndim == 1:
        rows = p[None, :]
        tgt = np.asarray([target], dtype=np.int64)
    elif p.ndim == 2:
        rows = p
        tgt = np.asarray(target, dtype=np.int64).reshape(-1)
        if tgt.shape[0] != rows.shape[0]:
            raise ShapeError(f"cross_entropy: {tgt.shape[0]} targets for {rows.shape[0]} rows")
    else:
        raise ShapeError(f"cross_entropy: expected vector or matrix, got {p.shape}")
    n = rows.shape[1]
    if np.any(tgt < 0) or np.any(tgt >= n):
        raise ValueError(f"cross_entropy: target out of range for {n} classes")
    m = rows.shape[0]
    picked = rows[np.arange(m), tgt]
    floored = np.maximum(picked, LOG_FLOOR)
    loss = -np.log(floored).mean()

    def bw(g):
        d = np.zeros_like(rows)
        d[np.arange(m), tgt] = np.where(picked > LOG_FLOOR, -1.0 / floored, 0.0) / m
        return (g * d.reshape(p.shape),)

    return probs.tape._append(loss, OpKind.CROSS_ENTROPY, (probs.id,), bw)


def weighted_nll(log_probs: Node, targets, weights) -> Node:
    """sum_i -weights[i] * log_probs[i, targets[i]] over the rows of a matrix."""
    lp = log_probs.value
    tgt = np.asarray(targets, dtype=np.int64).reshape(-1)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if lp.ndim != 2 or tgt.shape[0] != lp.shape[0] or w.shape != tgt.shape:
        raise ShapeError(f"weighted_nll: log_probs {lp.shape}, targets {tgt.shape}, weights {w.shape}")
    if np.any(tgt < 0) or np.any(tgt >= lp.shape[1]):
        raise ValueError(f"weighted_nll: target out of range for {lp.shape[1]} classes")
    rows = np.arange(lp.shape[0])
    loss = -(w * lp[rows, tgt]).sum()

    def bw(g):
        d = np.zeros_like(lp)
        d[rows, tgt] = -w
        return (g * d,)

    return log_probs.tape._append(loss, OpKind.WEIGHTED_NLL, (log_probs.id,), bw)


def sum(a: Node) -> Node:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return a.tape._append(a.value.sum(), OpKind.SUM, (a.id,), lambda g: (np.full(shape, g),))


def mean(a: Node) -> Node:
    shape, n = a.shape, a.value.size
    return a.tape._append(a.value.mean(), OpKind.MEAN, (a.id,),
                          lambda g: (np.full(shape, g / n),))


# --------------------------------------------------------------------------
# reverse pass
# --------------------------------------------------------------------------

def node_adjoints(tape: Tape, loss: Node) -> list[np.ndarray | None]:
    """Adjoint of ``loss`` w.r.t. every node on the tape (None where unreachable)."""
    if loss.tape is not tape:
        raise ValueError("loss node is not on this tape")
    if loss.value.shape != ():
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    adj: list[np.ndarray | None] = [None] * len(tape.nodes)
    adj[loss.id] = np.ones(())
    for i in range(loss.id, -1, -1):
        g = adj[i]
        node = tape.nodes[i]
        if g is None or node._backward is None:
            continue
        for pid, pg in zip(node.parents, node._backward(g)):
            if not tape.nodes[pid].requires_grad:
                continue
            adj[pid] = pg if adj[pid] is None else adj[pid] + pg
    return adj


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every registered parameter.

    Parameters the loss does not reach get zero arrays of matching shape.
    """
    adj = node_adjoints(tape, loss)
    grads = {}
    for name, nid in tape.parameters.items():
        g = adj[nid]
        grads[name] = np.zeros(tape.nodes[nid].shape) if g is None else np.asarray(g, dtype=np.float64)
    return grads
