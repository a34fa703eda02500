"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` whenever at least
one input requires a gradient. Outside a tape every operation returns a
plain constant, which is how evaluation runs without bookkeeping::

    with Tape() as tape:
        loss = mean(tanh(matmul(x, w)))
    backward(loss, tape)

Only the broadcasting forms the encoder needs are supported: equal shapes,
scalar-vs-tensor, and a row bias added along the last axis.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_ACTIVE: list["Tape"] = []


class Node:
    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: tuple, output: "Tensor", vjp: Callable):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.vjp = vjp

    def __repr__(self):
        return f"Node({self.op}, out={self.output.shape})"


class Tape:
    """Ordered record of primitive applications.

    Nodes are appended as operations execute, so the list is topologically
    ordered by construction. Reuse across steps requires :meth:`reset`.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def zeros_like(x: Tensor) -> Tensor:
    return Tensor(np.zeros_like(x.data))


def _emit(op: str, inputs: tuple, out: np.ndarray, vjp: Callable) -> Tensor:
    if type(out) is not np.ndarray or out.dtype != np.float64:
        out = np.asarray(out, dtype=np.float64)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.requires_grad = False
    t.grad = None
    t._tape = None
    out.flags.writeable = False
    if _ACTIVE:
        for x in inputs:
            if x.requires_grad:
                tape = _ACTIVE[-1]
                t.requires_grad = True
                t._tape = tape
                tape.nodes.append(Node(op, inputs, t, vjp))
                break
    return t


def _check_binary(op: str, a: Tensor, b: Tensor) -> None:
    sa, sb = a.data.shape, b.data.shape
    if sa == sb or not sa or not sb:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    # only the scalar-vs-tensor broadcast exists
    return np.asarray(grad.sum()).reshape(shape)


# --- binary elementwise ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("add", a, b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _emit("add", (a, b), a.data + b.data, vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("sub", a, b)

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _emit("sub", (a, b), a.data - b.data, vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary("mul", a, b)
    ad, bd = a.data, b.data

    def vjp(g):
        return _reduce_to(g * bd, a.shape), _reduce_to(g * ad, b.shape)

    return _emit("mul", (a, b), ad * bd, vjp)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a constant that is not itself differentiated."""
    c = float(c)
    return _emit("scale", (x,), x.data * c, lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[..., n] + b[n]``: the one row-broadcast form the dense layers use."""
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    n = b.shape[0]

    def vjp(g):
        return g, g.reshape(-1, n).sum(axis=0)

    return _emit("add_bias", (x, b), x.data + b.data, vjp)


# --- unary elementwise ----------------------------------------------------


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit("relu", (x,), np.where(pos, x.data, 0.0), lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _emit("exp", (x,), y, lambda g: (g * y,))


def log(x: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(x, floor)``; the gradient is zero where clamped."""
    xd = x.data
    live = xd > floor
    with np.errstate(divide="ignore"):
        y = np.log(np.maximum(xd, floor))

    def vjp(g):
        safe = np.where(live, xd, 1.0)
        return (np.where(live, g / safe, 0.0),)

    return _emit("log", (x,), y, vjp)


_ELEMENTWISE = {"add": add, "mul": mul, "scale": scale, "tanh": tanh, "relu": relu}


def elementwise(op_kind: str, *args) -> Tensor:
    try:
        fn = _ELEMENTWISE[op_kind]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op_kind!r}") from None
    return fn(*args)


# --- shape and reductions -------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    src = x.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _emit("sum", (x,), np.asarray(x.data.sum(axis=axis)), vjp)


def mean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ContractError("mean of an empty tensor")
    return scale(sum(x), 1.0 / x.size)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g @ bd.T, ad.T @ g

    return _emit("matmul", (a, b), ad @ bd, vjp)


# --- network-specific primitives ------------------------------------------


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-probabilities, stabilised by subtracting the row max."""
    x = logits.data
    if x.ndim != 2:
        raise DimensionError(f"log_softmax expects (batch, classes), got {logits.shape}")
    if x.shape[1] < 2:
        raise ContractError(f"log_softmax needs at least 2 classes, got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise NumericError("log_softmax received non-finite logits")
    shifted = x - x.max(axis=1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _emit("log_softmax", (logits,), y, vjp)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` for an integer id array of shape (batch, seq)."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise DimensionError(f"embedding_lookup expects ids of shape (batch, seq), got {ids.shape}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = np.argwhere((ids < 0) | (ids >= vocab))
        pos = tuple(int(v) for v in bad[0])
        raise IndexError(f"token id {int(ids[pos])} at position {pos} outside [0, {vocab})")
    ids = ids.astype(np.intp, copy=False)

    def vjp(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return _emit("embedding_lookup", (table,), table.data[ids], vjp)


def masked_mean_pool(h: Tensor, mask) -> Tensor:
    """Mean over the unmasked sequence positions of each example."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    if h.ndim != 3 or m.shape != h.shape[:2]:
        raise DimensionError(f"masked_mean_pool: h {h.shape} does not match mask {m.shape}")
    counts = m.sum(axis=1)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise ContractError(f"masked_mean_pool: row {int(empty[0])} has no unmasked positions")
    w = m[:, :, None] / counts[:, None, None]

    def vjp(g):
        return (g[:, None, :] * w,)

    return _emit("masked_mean_pool", (h,), (h.data * w).sum(axis=1), vjp)


def pick(x: Tensor, index) -> Tensor:
    """``x[b, index[b]]`` for each row b."""
    idx = np.asarray(index, dtype=np.intp)
    rows = np.arange(x.shape[0])

    def vjp(g):
        out = np.zeros_like(x.data)
        out[rows, idx] = g
        return (out,)

    return _emit("pick", (x,), x.data[rows, idx], vjp)


def take_rows(x: Tensor, index) -> Tensor:
    """``x[index]`` along the first axis; gradients scatter-add back."""
    idx = np.asarray(index, dtype=np.intp)
    if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= x.shape[0])):
        raise IndexError(f"take_rows: index out of range for leading extent {x.shape[0]}")

    def vjp(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("take_rows", (x,), x.data[idx], vjp)


def kl_rows(log_p: Tensor, log_q: Tensor, floor: float = math.log(1e-12)) -> Tensor:
    """Per-row ``sum p * (log p - log q)`` with ``log q`` clamped below at ``floor``.

    Terms with ``p == 0`` contribute nothing, including when ``log p`` is -inf.
    """
    if log_p.shape != log_q.shape or log_p.ndim != 2:
        raise DimensionError(f"kl_rows: shapes {log_p.shape} and {log_q.shape}")
    lp, lq_raw = log_p.data, log_q.data
    p = np.exp(lp)
    live = p > 0
    lq = np.maximum(lq_raw, floor)
    diff = np.where(live, lp - lq, 0.0)
    terms = p * diff

    def vjp(g):
        gcol = g[:, None]
        d_lp = gcol * np.where(live, terms + p, 0.0)
        d_lq = gcol * np.where(lq_raw > floor, -p, 0.0)
        return d_lp, d_lq

    return _emit("kl_rows", (log_p, log_q), terms.sum(axis=1), vjp)


# --- reverse pass ---------------------------------------------------------


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad.

    Leaves are tensors that require grad but were not produced on ``tape``.
    Calling twice without clearing grads adds the second result on top.
    """
    if loss.size != 1 or loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss._tape
    if tape is None or loss._tape is not tape:
        raise ContractError("loss was not recorded on the given tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi
            if inp._tape is not tape:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
