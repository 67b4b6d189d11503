"""Minimal deterministic tensor engine with reverse-mode autodiff.

Values are numpy arrays (float32 by default, float64 in the shadow mode used
for gradient checking).  Every operation builds a node in a dynamic graph;
``backward`` walks the graph in reverse topological order and accumulates
gradients into the leaves.  Ops are pure: inputs are never mutated.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Param",
    "GraphConsumedError",
    "ShapeError",
    "tensor",
    "no_grad",
    "is_grad_enabled",
    "scope",
    "current_scope",
    "record_tape",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "relu",
    "sigmoid",
    "softmax_rows",
    "reshape",
    "transpose",
    "concat",
    "reduce_sum",
    "reduce_mean",
    "reduce_max",
    "sum_all",
    "backward",
]


class ShapeError(ValueError):
    """Raised when operand shapes violate an operation's preconditions."""


class GraphConsumedError(RuntimeError):
    """Raised when backward is called again on an already-consumed graph."""


_grad_enabled = True
_scope_stack: list[str] = []
_tape: list["Tensor"] | None = None


class no_grad:
    """Context manager disabling graph construction (fast inference path)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def is_grad_enabled() -> bool:
    return _grad_enabled


class scope:
    """Context manager tagging created nodes with a dotted layer path."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        _scope_stack.append(self.name)
        return self

    def __exit__(self, *exc):
        _scope_stack.pop()
        return False


def current_scope() -> str:
    return ".".join(_scope_stack)


class record_tape:
    """Collects every node created inside the context, in creation order.

    Used by the efficiency analyzers to attribute MACs to layers and to
    simulate activation liveness.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        global _tape
        if _tape is not None:
            raise RuntimeError("nested tape recording is not supported")
        _tape = self.nodes
        return self

    def __exit__(self, *exc):
        global _tape
        _tape = None
        return False


class Tensor:
    """A value node: numpy data plus optional gradient and graph links."""

    __slots__ = (
        "data",
        "grad",
        "requires_grad",
        "op",
        "parents",
        "_backward",
        "_consumed",
        "macs",
        "eops",
        "tag",
    )

    def __init__(self, data, requires_grad=False, op="leaf", parents=(),
                 macs=0, eops=0):
        if isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            # numpy scalar (e.g. the result of a 0-d reduction): keep its
            # dtype so float64 shadow computations stay float64 end to end
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self.op = op
        # tape recording keeps links even without grad so liveness analysis
        # can see consumers during a no-grad forward
        self.parents = parents if (self.requires_grad or _tape is not None) else ()
        self._backward = None
        self._consumed = False
        self.macs = macs
        self.eops = eops
        self.tag = current_scope() if _tape is not None else ""
        if _tape is not None:
            _tape.append(self)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, dtype={self.data.dtype})"


class Param(Tensor):
    """A named trainable leaf.  ``frozen`` discards its gradient."""

    __slots__ = ("name", "trainable", "frozen")

    def __init__(self, data, name="", trainable=True):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.trainable = trainable
        self.frozen = False


def tensor(data, requires_grad=False, dtype=np.float32):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _make(data, op, parents, bw, macs=0, eops=0):
    """Create a result node and attach the backward closure if needed."""
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, op=op, parents=parents, macs=macs, eops=eops)
    if req:
        out._backward = bw
    return out


def accumulate(t: Tensor, g: np.ndarray):
    """Add a gradient contribution to a node (never in place)."""
    if not t.requires_grad:
        return
    if isinstance(t, Param) and t.frozen:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bw(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out, "add", (a, b), bw, eops=out.size)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bw(g):
        accumulate(a, _unbroadcast(g, a.data.shape))
        accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out, "sub", (a, b), bw, eops=out.size)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bw(g):
        accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, "mul", (a, b), bw, eops=out.size)


def scale(a: Tensor, s: float) -> Tensor:
    s = a.data.dtype.type(s)
    out = a.data * s

    def bw(g):
        accumulate(a, g * s)

    return _make(out, "scale", (a,), bw, eops=out.size)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; also accepts identically-batched stacks of matrices."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul needs rank >= 2 operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}")
    if a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError("matmul batch extents must match")
    out = a.data @ b.data

    def bw(g):
        accumulate(a, g @ b.data.swapaxes(-1, -2))
        accumulate(b, a.data.swapaxes(-1, -2) @ g)

    n_batch = int(np.prod(a.data.shape[:-2], dtype=np.int64)) if a.data.ndim > 2 else 1
    macs = n_batch * a.data.shape[-2] * a.data.shape[-1] * b.data.shape[-1]
    return _make(out, "matmul", (a, b), bw, macs=macs)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def bw(g):
        accumulate(a, g * (a.data > 0))

    return _make(out, "relu", (a,), bw, eops=out.size)


def sigmoid(a: Tensor) -> Tensor:
    # Clip-free stable form: exp of the negative magnitude only.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        accumulate(a, g * out * (1.0 - out))

    return _make(out, "sigmoid", (a,), bw, eops=out.size)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-stabilized softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        gs = (g * out).sum(axis=-1, keepdims=True)
        accumulate(a, out * (g - gs))

    return _make(out, "softmax", (a,), bw, eops=3 * out.size)


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def bw(g):
        accumulate(a, g.reshape(a.data.shape))

    return _make(out, "reshape", (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = a.data.transpose(axes)

    def bw(g):
        accumulate(a, g.transpose(inv))

    return _make(out, "transpose", (a,), bw)


def concat(tensors, axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            accumulate(t, piece)

    return _make(out, "concat", tuple(tensors), bw)


def reduce_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            accumulate(a, np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(np.asarray(out), "sum", (a,), bw, eops=a.data.size)


def reduce_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.data.shape[i] for i in ax]))
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reduce_max(a: Tensor, axis: int, keepdims=False) -> Tensor:
    """Max along one axis; gradient routes to the first occurrence on ties."""
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, np.expand_dims(idx, axis), g, axis=axis)
        accumulate(a, buf)

    return _make(out, "max", (a,), bw, eops=a.data.size)


def sum_all(a: Tensor) -> Tensor:
    return reduce_sum(a, axis=None)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------

def backward(root: Tensor):
    """Reverse-topological gradient accumulation from a scalar root.

    Frozen params end with explicit zero gradients.  The graph is consumed:
    a second call on the same root raises GraphConsumedError.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        raise ValueError("root does not require grad (no reachable parameters?)")
    if root._consumed:
        raise GraphConsumedError("backward already ran on this graph")

    topo: list[Tensor] = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                if p._consumed and p.parents:
                    raise GraphConsumedError("graph shares nodes with an already-consumed graph")
                stack.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node.parents:  # leaves stay reusable across graphs
            node._consumed = True
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            node._backward = None
    for node in topo:
        if isinstance(node, Param) and node.frozen:
            node.grad = np.zeros_like(node.data)
