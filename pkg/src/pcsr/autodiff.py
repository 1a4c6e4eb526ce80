"""Minimal reverse-mode differentiation on numpy arrays.

Provides exactly the primitives the point-cloud networks and losses need:
row-wise affine maps, neighbor aggregation (sum / mean / element-wise max)
over precomputed index sets, row gathering, a handful of element-wise ops
and the reductions. Every operation records its provenance on the output
node; ``backward`` linearizes the graph into a tape and accumulates exact
adjoints. Double precision throughout.

Gradient semantics are single-shot: each ``backward`` call zeroes the
gradients of every node it can reach before accumulating, so calling it
twice yields the same gradients, not doubled ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import NeighborIndex

Array = np.ndarray


@dataclass
class OpRecord:
    """Provenance of a produced tensor: the op name, its inputs and the adjoint rule.

    ``backward`` maps the output gradient to one gradient per input
    (``None`` for inputs that need no gradient).
    """

    op: str
    inputs: tuple
    backward: Callable[[Array], tuple]


class Tensor:
    """A node in the computation graph holding a float64 numpy array.

    Leaves (no ``op_record``) are parameters or constants; interior nodes
    remember how they were produced.
    """

    __slots__ = ("data", "requires_grad", "grad", "op_record")

    def __init__(self, data, requires_grad: bool = False, op_record: Optional[OpRecord] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[Array] = None
        self.op_record = op_record

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def is_leaf(self) -> bool:
        return self.op_record is None

    def __repr__(self):
        op = self.op_record.op if self.op_record else "leaf"
        return f"Tensor(shape={self.data.shape}, op={op}, requires_grad={self.requires_grad})"


class Parameter:
    """A named leaf tensor with requires_grad set."""

    def __init__(self, name: str, data):
        self.name = name
        self.node = Tensor(np.array(data, dtype=np.float64), requires_grad=True)

    @property
    def data(self) -> Array:
        return self.node.data

    @data.setter
    def data(self, value):
        self.node.data = np.asarray(value, dtype=np.float64)

    @property
    def grad(self) -> Array:
        """Accumulated gradient; zeros when the parameter was unreachable."""
        if self.node.grad is None:
            return np.zeros_like(self.node.data)
        return self.node.grad

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.node.data.shape})"


def constant(data) -> Tensor:
    """Wrap an array as a non-differentiable leaf."""
    return Tensor(data, requires_grad=False)


def _result(op: str, data: Array, inputs: Sequence[Tensor], backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    record = OpRecord(op, tuple(inputs), backward)
    return Tensor(data, requires_grad=needs, op_record=record)


class Tape:
    """Topological linearization of the graph reaching a root node.

    Records appear so that every record's inputs precede it; ``backward``
    walks the list in reverse.
    """

    def __init__(self, nodes: list):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            if node.op_record is not None:
                for inp in node.op_record.inputs:
                    if id(inp) not in seen:
                        stack.append((inp, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, params: Sequence = ()) -> None:
    """Populate ``.grad`` on every node reachable from ``loss``.

    The loss must be a scalar (shape ``()``). Gradients are zeroed first,
    then exact adjoints are accumulated in reverse topological order, so a
    second call reproduces rather than accumulates. Pass the model's
    parameters in ``params`` to also clear any that this loss does not
    reach; those then read as zero gradients.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    for p in params:
        node = p.node if isinstance(p, Parameter) else p
        node.grad = None
    tape = Tape.trace(loss)
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(tape.nodes):
        rec = node.op_record
        if rec is None or node.grad is None or not node.requires_grad:
            continue
        grads = rec.backward(node.grad)
        for inp, g in zip(rec.inputs, grads):
            if g is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                inp.grad = np.zeros_like(inp.data)
            inp.grad = inp.grad + g


# ---------------------------------------------------------------------------
# primitives


def linear(x: Tensor, weight: Parameter, bias: Optional[Parameter] = None) -> Tensor:
    """Row-wise affine map: x @ W (+ b)."""
    w = weight.node
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError("linear expects 2-D input and weight")
    if x.data.shape[1] != w.data.shape[0]:
        raise ValueError(
            f"inner dimensions differ: input {x.data.shape} vs weight {w.data.shape}"
        )
    b = bias.node if bias is not None else None
    if b is not None and b.data.shape != (w.data.shape[1],):
        raise ValueError(f"bias shape {b.data.shape} does not match output width {w.data.shape[1]}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bwd(g):
        gx = g @ w.data.T
        gw = x.data.T @ g
        gb = g.sum(axis=0) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return _result("linear", out, inputs, bwd)


def _neighbor_array(nbrs) -> Array:
    idx = nbrs.indices if isinstance(nbrs, NeighborIndex) else np.asarray(nbrs, dtype=np.int64)
    if idx.ndim != 2:
        raise ValueError("neighbor indices must be 2-D (queries, k)")
    return idx


def _check_neighbor_range(idx: Array, n_rows: int, op: str):
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ValueError(f"{op}: neighbor index out of range for {n_rows} feature rows")


def neighbor_sum(features: Tensor, nbrs) -> Tensor:
    """Row q of the output is the sum of the feature rows listed in nbrs row q."""
    idx = _neighbor_array(nbrs)
    _check_neighbor_range(idx, features.data.shape[0], "neighbor_sum")
    gathered = features.data[idx]  # (q, k, c)
    out = gathered.sum(axis=1)

    def bwd(g):
        gf = np.zeros_like(features.data)
        np.add.at(gf, idx.ravel(), np.repeat(g, idx.shape[1], axis=0))
        return (gf,)

    return _result("neighbor_sum", out, (features,), bwd)


def neighbor_mean(features: Tensor, nbrs) -> Tensor:
    """neighbor_sum divided by k."""
    idx = _neighbor_array(nbrs)
    _check_neighbor_range(idx, features.data.shape[0], "neighbor_mean")
    k = idx.shape[1]
    out = features.data[idx].sum(axis=1) / k

    def bwd(g):
        gf = np.zeros_like(features.data)
        np.add.at(gf, idx.ravel(), np.repeat(g / k, k, axis=0))
        return (gf,)

    return _result("neighbor_mean", out, (features,), bwd)


def neighbor_max(features: Tensor, nbrs) -> Tensor:
    """Element-wise maximum over the listed neighbor rows.

    The adjoint routes each output entry's gradient to its argmax
    contributor; ties go to the first-listed neighbor.
    """
    idx = _neighbor_array(nbrs)
    _check_neighbor_range(idx, features.data.shape[0], "neighbor_max")
    gathered = features.data[idx]  # (q, k, c)
    winner_pos = gathered.argmax(axis=1)  # first max wins ties
    out = np.take_along_axis(gathered, winner_pos[:, None, :], axis=1)[:, 0, :]
    winner_rows = np.take_along_axis(idx, winner_pos, axis=1)  # (q, c)

    def bwd(g):
        gf = np.zeros_like(features.data)
        c = g.shape[1]
        flat_targets = winner_rows.ravel() * c + np.tile(np.arange(c), g.shape[0])
        np.add.at(gf.ravel(), flat_targets, g.ravel())
        return (gf,)

    return _result("neighbor_max", out, (features,), bwd)


def take_rows(x: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D tensor; the adjoint scatter-adds back."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("take_rows expects 1-D indices")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ValueError("take_rows index out of range")
    out = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _result("take_rows", out, (x,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"subtract shape mismatch: {a.data.shape} vs {b.data.shape}")
    return _result("subtract", a.data - b.data, (a, b), lambda g: (g, -g))


def multiply_scalar(x: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result("multiply_scalar", x.data * s, (x,), lambda g: (g * s,))


def square(x: Tensor) -> Tensor:
    return _result("square", x.data * x.data, (x,), lambda g: (g * 2.0 * x.data,))


def relu(x: Tensor) -> Tensor:
    # adjoint at exactly 0 is defined as 0
    mask = x.data > 0.0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def reduce_mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean())

    def bwd(g):
        return (np.full_like(x.data, float(g) / n),)

    return _result("reduce_mean", out, (x,), bwd)


def reduce_sum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def bwd(g):
        return (np.full_like(x.data, float(g)),)

    return _result("reduce_sum", out, (x,), bwd)


def reshape(x: Tensor, new_shape) -> Tensor:
    new_shape = tuple(int(s) for s in new_shape)
    if int(np.prod(new_shape)) != x.data.size:
        raise ValueError(f"cannot reshape {x.data.shape} ({x.data.size} elements) to {new_shape}")
    out = x.data.reshape(new_shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return _result("reshape", out, (x,), bwd)
