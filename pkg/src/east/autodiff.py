"""Reverse-mode automatic differentiation over dense 2-D float64 tensors.

A fresh Tape is built for every training step. Ops append nodes in
topological order (parents always precede children) and ``Tape.backward``
walks the node list once, in reverse insertion order. Parameter gradients
are filtered by tag at accumulation time; this single mechanism is what
makes the trainer's gradient-routing rules enforceable and testable.

Tensors without a node id are constants: gradients never flow into them,
and a computation built entirely from constants records nothing, which is
how inference-mode forward passes work.

A tape and its tensors belong to one thread for the duration of a step;
distinct tapes on distinct threads are independent. Parameters are
mutated only by the trainer (single writer), so nothing here locks.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    BatchTooSmallError,
    ContractError,
    DimensionError,
    NumericError,
)

PARAM_TAGS = ("student", "teacher_transform", "teacher_head")

Vjp = Callable[[np.ndarray], np.ndarray]


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D matrices; got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"tensors must be non-empty; got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Parameter:
    """A trainable 2-D array with a gradient buffer and a gate tag.

    The tag decides which backward passes may deposit gradient into this
    parameter (see ``Tape.backward``).
    """

    __slots__ = ("value", "grad", "trainable", "tag", "name")

    def __init__(self, value, tag: str, trainable: bool = True, name: str = ""):
        if tag not in PARAM_TAGS:
            raise ValueError(f"unknown parameter tag {tag!r}; expected one of {PARAM_TAGS}")
        self.value = _as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self.trainable = trainable
        self.tag = tag
        self.name = name or tag

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape}, tag={self.tag!r})"


class Tensor:
    """Dense 2-D float64 value, optionally tracked on a tape."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Optional["Tape"] = None, node: Optional[int] = None):
        self.data = _as_matrix(data)
        self.tape = tape
        self.node = node

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor; got {self.data.shape}")
        return float(self.data[0, 0])

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __repr__(self) -> str:
        tracked = "tracked" if self.node is not None else "constant"
        return f"Tensor(shape={self.data.shape}, {tracked})"


class _Node:
    __slots__ = ("parents", "vjps", "param")

    def __init__(self, parents: tuple[int, ...], vjps: tuple[Vjp, ...],
                 param: Optional[Parameter] = None):
        self.parents = parents
        self.vjps = vjps
        self.param = param


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._watched: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, param: Parameter) -> Tensor:
        """Leaf tensor for a parameter; repeated calls reuse one node."""
        nid = self._watched.get(id(param))
        if nid is None:
            nid = self._append(_Node((), (), param))
            self._watched[id(param)] = nid
        return Tensor(param.value, self, nid)

    def constant(self, data) -> Tensor:
        """A value pinned to this tape that gradients never flow into."""
        return Tensor(data, self, None)

    def _append(self, node: _Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def backward(self, root: Tensor, gates: Optional[Iterable[str]] = None
                 ) -> list[Optional[np.ndarray]]:
        """Accumulate d(root)/d(param) into each gated parameter's grad.

        Parameters whose tag is outside ``gates`` are left untouched
        (bit-identical grad buffers), not zeroed. ``gates=None`` admits every
        tag. Returns the per-node gradient list so callers can also read
        gradients of non-parameter nodes.
        """
        if root.tape is not self or root.node is None:
            raise ContractError("backward root is not recorded on this tape")
        if root.data.shape != (1, 1):
            raise ContractError(f"backward root must be a 1x1 scalar; got {root.data.shape}")
        gate_set = None
        if gates is not None:
            gate_set = frozenset(gates)
            unknown = gate_set.difference(PARAM_TAGS)
            if unknown:
                raise ValueError(f"unknown gate tags: {sorted(unknown)}")

        grads: list[Optional[np.ndarray]] = [None] * len(self._nodes)
        grads[root.node] = np.ones((1, 1))
        for nid in range(root.node, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self._nodes[nid]
            if node.param is not None:
                if gate_set is None or node.param.tag in gate_set:
                    node.param.grad += g
                continue
            for pid, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                prev = grads[pid]
                # never accumulate in place: vjps may alias g or forward data
                grads[pid] = contrib if prev is None else prev + contrib
        return grads


def param_tensor(tape: Optional[Tape], param: Parameter) -> Tensor:
    """Watch ``param`` on ``tape``, or return a constant view when tape is None."""
    if tape is None:
        return Tensor(param.value)
    return tape.watch(param)


def record_op(value: np.ndarray, op: str,
              inputs: Sequence[tuple[Tensor, Vjp]]) -> Tensor:
    """Register a forward result with its vector-Jacobian products.

    All forward outputs must be finite; a non-finite result raises
    NumericError rather than propagating silently. Inputs that are
    constants contribute no node edge.
    """
    value = np.asarray(value, dtype=np.float64)
    if not np.isfinite(value).all():
        raise NumericError(f"{op} produced non-finite values")
    tape: Optional[Tape] = None
    for t, _ in inputs:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ContractError(f"{op}: operands belong to different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(value)
    pairs = [(t.node, vjp) for t, vjp in inputs if t.node is not None]
    if not pairs:
        return Tensor(value, tape, None)
    node = tape._append(_Node(tuple(p for p, _ in pairs), tuple(v for _, v in pairs)))
    return Tensor(value, tape, node)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b."""
    if a.cols != b.rows:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return record_op(ad @ bd, "matmul",
                     [(a, lambda g: g @ bd.T), (b, lambda g: ad.T @ g)])


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a 1-row operand broadcasts over the other's rows (bias add)."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        return record_op(ad + bd, "add", [(a, lambda g: g), (b, lambda g: g)])
    if bd.shape == (1, ad.shape[1]):
        return record_op(ad + bd, "add",
                         [(a, lambda g: g),
                          (b, lambda g: g.sum(axis=0, keepdims=True))])
    if ad.shape == (1, bd.shape[1]):
        return record_op(ad + bd, "add",
                         [(a, lambda g: g.sum(axis=0, keepdims=True)),
                          (b, lambda g: g)])
    raise DimensionError(f"add: shapes {ad.shape} and {bd.shape} are not compatible")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub: shapes differ: {a.shape} vs {b.shape}")
    return record_op(a.data - b.data, "sub", [(a, lambda g: g), (b, lambda g: -g)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of same-shape tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record_op(ad * bd, "mul", [(a, lambda g: g * bd), (b, lambda g: g * ad)])


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return record_op(a.data * s, "scale", [(a, lambda g: g * s)])


def relu(a: Tensor) -> Tensor:
    ad = a.data
    return record_op(np.maximum(ad, 0.0), "relu", [(a, lambda g: g * (ad > 0.0))])


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Logistic function computed branch-wise so exp never overflows."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = stable_sigmoid(a.data)
    return record_op(out, "sigmoid", [(a, lambda g: g * out * (1.0 - out))])


def mean(a: Tensor) -> Tensor:
    size = a.data.size
    shape = a.data.shape
    val = np.array([[a.data.mean()]])
    return record_op(val, "mean",
                     [(a, lambda g: np.full(shape, g[0, 0] / size))])


def sum_all(a: Tensor) -> Tensor:
    shape = a.data.shape
    val = np.array([[a.data.sum()]])
    return record_op(val, "sum_all",
                     [(a, lambda g: np.full(shape, g[0, 0]))])


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root; callers must keep entries strictly positive
    for the gradient to stay finite."""
    out = np.sqrt(a.data)
    return record_op(out, "sqrt", [(a, lambda g: g / (2.0 * out))])


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"div: shapes differ: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return record_op(ad / bd, "div",
                     [(a, lambda g: g / bd),
                      (b, lambda g: -g * ad / (bd * bd))])


def clamp01(a: Tensor) -> Tensor:
    """Clip to [0, 1]; gradient passes through inside the interval, zero outside."""
    ad = a.data
    mask = (ad >= 0.0) & (ad <= 1.0)
    return record_op(np.clip(ad, 0.0, 1.0), "clamp01", [(a, lambda g: g * mask)])


def detach(a: Tensor) -> Tensor:
    """Stop-gradient: same forward values, no tape history."""
    return Tensor(a.data)


def pairwise_euclidean(x: Tensor) -> Tensor:
    """n x n matrix of Euclidean distances between the rows of x.

    Symmetric by construction with an exact zero diagonal. At coincident
    rows the norm is not differentiable; the subgradient 0 is used there,
    which keeps training stable when a batch contains duplicates.
    """
    n = x.rows
    if n < 2:
        raise BatchTooSmallError(f"pairwise distances need at least 2 rows; got {n}")
    xd = x.data
    diff = xd[:, None, :] - xd[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))

    def vjp(g: np.ndarray) -> np.ndarray:
        w = np.zeros_like(dist)
        np.divide(g + g.T, dist, out=w, where=dist > 0.0)
        return w.sum(axis=1, keepdims=True) * xd - w @ xd

    return record_op(dist, "pairwise_euclidean", [(x, vjp)])


def double_center(d: Tensor) -> Tensor:
    """Subtract row and column means and add back the grand mean.

    Every row sum and column sum of the output is zero (up to rounding).
    The operator is linear and self-adjoint, so the backward rule is the
    same centering applied to the upstream gradient.
    """
    if d.rows != d.cols:
        raise DimensionError(f"double_center needs a square matrix; got {d.shape}")

    def center(m: np.ndarray) -> np.ndarray:
        return m - m.mean(axis=1, keepdims=True) - m.mean(axis=0, keepdims=True) + m.mean()

    return record_op(center(d.data), "double_center", [(d, center)])
