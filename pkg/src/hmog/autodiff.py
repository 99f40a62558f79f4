"""Tape-based reverse-mode automatic differentiation on float64 arrays.

Operations executed while a :class:`Graph` is active are appended to its
tape in execution order, so the tape is always topologically sorted.  The
vector-Jacobian product of every op is written with the same differentiable
ops, which means a backward pass run with ``create_graph=True`` is itself
recorded and can be differentiated again (double backprop).

Typical use::

    with Graph() as g:
        loss = ((x @ w).tanh() ** 2).mean()
        grads = g.gradients(loss, [w])
"""

from __future__ import annotations

import contextlib
import threading
from collections.abc import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Graph",
    "GraphError",
    "ShapeError",
    "no_grad",
    "active_graph",
    "input_gradient",
    "grad_check",
    "as_tensor",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to the op's rules."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar loss, foreign node, ...)."""


_state = threading.local()


def _stack() -> list:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_graph() -> Graph | None:
    """Graph that currently records ops on this thread, or None."""
    stack = _stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording; ops return plain constant tensors."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


class Tensor:
    """Dense float64 array, optionally attached to a node of a graph."""

    __slots__ = ("data", "requires_grad", "graph", "node")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.graph: Graph | None = None
        self.node: int | None = None

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
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: expected a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __rmatmul__ = lambda self, other: matmul(other, self)  # noqa: E731
    __getitem__ = lambda self, idx: getitem(self, idx)  # noqa: E731

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return mul(self, reciprocal(other))

    def __rtruediv__(self, other):
        return mul(other, reciprocal(self))

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, exponent):
        if exponent == 2:
            return square(self)
        if exponent == -0.5:
            return rsqrt(self)
        if exponent == -1:
            return reciprocal(self)
        raise NotImplementedError(f"pow: unsupported exponent {exponent!r}")

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sigmoid(self) -> Tensor:
        return sigmoid(self)

    def tanh(self) -> Tensor:
        return tanh(self)

    def softplus(self) -> Tensor:
        return softplus(self)

    def softmax(self) -> Tensor:
        return softmax(self)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)


class Parameter(Tensor):
    """Named leaf tensor owned by a model."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64, copy=True), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("kind", "input_ids", "inputs", "output", "vjp", "twice")

    def __init__(self, kind, input_ids, inputs, output, vjp, twice):
        self.kind = kind
        self.input_ids = input_ids
        self.inputs = inputs
        self.output = output
        self.vjp = vjp
        self.twice = twice


class Graph:
    """Append-only tape of op records plus the gradients of the last pass.

    A graph is used as a context manager; it records every op whose inputs
    require gradients while it is the innermost active graph on the thread.
    Build a fresh graph per training step.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.grads: dict[int, Tensor] = {}
        self._leaf_ids: dict[int, int] = {}

    def __enter__(self) -> Graph:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _stack()
        if not stack or stack[-1] is not self:
            raise GraphError("graph contexts exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    @contextlib.contextmanager
    def recording(self):
        _stack().append(self)
        try:
            yield self
        finally:
            _stack().pop()

    def _leaf(self, t: Tensor) -> int:
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), (), t, None, True))
            self._leaf_ids[id(t)] = nid
        return nid

    def node_id(self, t: Tensor) -> int | None:
        """Id of ``t`` in this graph, or None if it never entered it."""
        if t.node is not None:
            return t.node if t.graph is self else None
        return self._leaf_ids.get(id(t))

    def _add(self, kind, out: Tensor, inputs, vjp, twice) -> None:
        ids = []
        for t in inputs:
            if not t.requires_grad:
                ids.append(None)
            elif t.node is not None:
                if t.graph is not self:
                    raise GraphError(f"{kind}: input belongs to a different graph")
                ids.append(t.node)
            else:
                ids.append(self._leaf(t))
        out.graph = self
        out.node = len(self.nodes)
        self.nodes.append(_Node(kind, tuple(ids), inputs, out, vjp, twice))

    def backward(
        self,
        loss: Tensor,
        wrt: Sequence[Tensor] | None = None,
        create_graph: bool = False,
    ) -> dict[int, Tensor]:
        """Accumulate d(loss)/d(node) for every node on a path to ``loss``.

        With ``wrt`` given, only nodes lying between those tensors and the
        loss are visited.  With ``create_graph`` the gradient computation is
        recorded on this graph so its results can be differentiated again.
        Returns (and stores in ``self.grads``) a map node id -> gradient.
        """
        if loss.size != 1:
            raise GraphError(f"backward: loss must be scalar, got shape {loss.shape}")
        if loss.node is None or loss.graph is not self:
            raise GraphError("backward: loss is not a node of this graph")
        start = loss.node

        reach = None
        if wrt is not None:
            reach = bytearray(start + 1)
            for t in wrt:
                nid = self.node_id(t)
                if nid is not None and nid <= start:
                    reach[nid] = 1
            for nid in range(start + 1):
                if not reach[nid]:
                    for i in self.nodes[nid].input_ids:
                        if i is not None and reach[i]:
                            reach[nid] = 1
                            break

        grads: dict[int, Tensor] = {start: Tensor(np.ones_like(loss.data))}
        ctx = self.recording() if create_graph else no_grad()
        with ctx:
            for nid in range(start, -1, -1):
                g = grads.get(nid)
                if g is None:
                    continue
                node = self.nodes[nid]
                if node.vjp is None:
                    continue
                needs = tuple(
                    i is not None and (reach is None or bool(reach[i])) for i in node.input_ids
                )
                if not any(needs):
                    continue
                if create_graph and not node.twice:
                    raise GraphError(
                        f"backward: op '{node.kind}' is not twice differentiable; "
                        "cannot build a differentiable gradient through it"
                    )
                for i, gi, need in zip(node.input_ids, node.vjp(g, needs), needs):
                    if not need or gi is None:
                        continue
                    prev = grads.get(i)
                    grads[i] = gi if prev is None else add(prev, gi)
        self.grads = grads
        return grads

    def gradients(
        self,
        loss: Tensor,
        wrt: Sequence[Tensor],
        create_graph: bool = False,
    ) -> list[Tensor]:
        """Gradients of ``loss`` w.r.t. each tensor in ``wrt`` (zeros if unreachable)."""
        grads = self.backward(loss, wrt=wrt, create_graph=create_graph)
        out = []
        for t in wrt:
            nid = self.node_id(t)
            g = grads.get(nid) if nid is not None else None
            out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
        return out


def input_gradient(graph: Graph, scalar_output: Tensor, x: Tensor) -> Tensor:
    """d(scalar_output)/dx as a recorded node, ready for a second backward."""
    return graph.gradients(scalar_output, [x], create_graph=True)[0]


def grad_check(fn: Callable[[], Tensor], params: Iterable[Parameter], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` rebuilds the scalar loss from the current parameter values, using
    the active graph if it needs one.  The error per entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    params = list(params)
    with Graph() as g:
        loss = fn()
        analytic = [t.data for t in g.gradients(loss, params)]

    def value() -> float:
        # a throwaway graph, so losses that need one (input gradients) still work
        with Graph():
            return float(fn().data.reshape(-1)[0])

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError(f"grad_check: parameter {getattr(p, 'name', '')!r} is not contiguous")
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = value()
            flat[i] = orig - eps
            fm = value()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            a = ga[i]
            if not (np.isfinite(num) and np.isfinite(a)):
                return float("inf")
            worst = max(worst, abs(a - num) / max(1e-8, abs(a) + abs(num)))
    return worst


# ---------------------------------------------------------------------------
# ops


def _record(kind: str, out: np.ndarray, inputs: tuple, vjp, twice: bool = True) -> Tensor:
    result = Tensor(out)
    try:
        graph = _state.stack[-1]
    except (AttributeError, IndexError):
        return result
    if graph is None:
        return result
    for t in inputs:
        if t.requires_grad:
            result.requires_grad = True
            graph._add(kind, result, inputs, vjp, twice)
            break
    return result


def _broadcast(kind: str, a: Tensor, b: Tensor, fn) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast("add", a, b, np.add)

    def vjp(g, needs):
        return (sum_to(g, a.shape) if needs[0] else None, sum_to(g, b.shape) if needs[1] else None)

    return _record("add", out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast("subtract", a, b, np.subtract)

    def vjp(g, needs):
        return (
            sum_to(g, a.shape) if needs[0] else None,
            sum_to(scale(g, -1.0), b.shape) if needs[1] else None,
        )

    return _record("subtract", out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _broadcast("multiply", a, b, np.multiply)

    def vjp(g, needs):
        return (
            sum_to(mul(g, b), a.shape) if needs[0] else None,
            sum_to(mul(g, a), b.shape) if needs[1] else None,
        )

    return _record("multiply", out, (a, b), vjp)


def scale(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    return _record("scale", x.data * c, (x,), lambda g, needs: (scale(g, c),))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 1:
        return matvec(a, b)

    def vjp(g, needs):
        return (
            matmul(g, transpose(b)) if needs[0] else None,
            matmul(transpose(a), g) if needs[1] else None,
        )

    return _record("matmul", a.data @ b.data, (a, b), vjp)


def matvec(a: Tensor, v: Tensor) -> Tensor:
    """(n, m) @ (m,) -> (n,)."""
    a, v = as_tensor(a), as_tensor(v)
    if a.ndim != 2 or v.ndim != 1 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"matvec: incompatible shapes {a.shape} and {v.shape}")

    def vjp(g, needs):
        return (
            mul(reshape(g, (g.shape[0], 1)), v) if needs[0] else None,
            matvec(transpose(a), g) if needs[1] else None,
        )

    return _record("matvec", a.data @ v.data, (a, v), vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w.T + b`` for x (n, in), w (out, in), b (out,)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise ShapeError(f"linear: incompatible shapes x {x.shape}, weight {w.shape}, bias {b.shape}")

    def vjp(g, needs):
        return (
            matmul(g, w) if needs[0] else None,
            matmul(transpose(g), x) if needs[1] else None,
            tsum(g, axis=0) if needs[2] else None,
        )

    return _record("linear", x.data @ w.data.T + b.data, (x, w, b), vjp)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {x.shape}")
    return _record("transpose", x.data.T, (x,), lambda g, needs: (transpose(g),))


def reshape(x: Tensor, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return _record("reshape", out, (x,), lambda g, needs: (reshape(g, x.shape),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if x.shape == shape:
        return x
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return _record("broadcast_to", out, (x,), lambda g, needs: (sum_to(g, x.shape),))


def sum_to(x: Tensor, shape) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1
    )
    out = x.data.sum(axis=axes, keepdims=True)
    out = out.reshape(shape)
    return _record("sum_to", out, (x,), lambda g, needs: (broadcast_to(g, x.shape),))


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g, needs):
        if axis is not None and not keepdims:
            g = reshape(g, np.expand_dims(out, axis).shape)
        elif axis is None and not keepdims:
            g = reshape(g, (1,) * x.ndim)
        return (broadcast_to(g, x.shape),)

    return _record("sum", out, (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("mean: empty tensor")
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(tsum(x, axis, keepdims), 1.0 / float(count))


def square(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _record("square", x.data * x.data, (x,), lambda g, needs: (scale(mul(g, x), 2.0),))


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    e = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = None

    def vjp(g, needs):
        return (mul(g, mul(out, sub(1.0, out))),)

    out = _record("sigmoid", out_data, (x,), vjp)
    return out


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = None

    def vjp(g, needs):
        return (mul(g, sub(1.0, square(out))),)

    out = _record("tanh", np.tanh(x.data), (x,), vjp)
    return out


def softplus(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0.0)
    return _record("softplus", out, (x,), lambda g, needs: (mul(g, sigmoid(x)),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis (max-shifted)."""
    x = as_tensor(x)
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = None

    def vjp(g, needs):
        inner = tsum(mul(g, out), axis=-1, keepdims=True)
        return (mul(out, sub(g, inner)),)

    out = _record("softmax", e / e.sum(axis=-1, keepdims=True), (x,), vjp)
    return out


def exp(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = None
    out = _record("exp", np.exp(x.data), (x,), lambda g, needs: (mul(g, out),))
    return out


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    return _record("log", np.log(x.data), (x,), lambda g, needs: (mul(g, reciprocal(x)),))


def reciprocal(x) -> Tensor:
    x = as_tensor(x)
    out = None

    def vjp(g, needs):
        return (scale(mul(g, square(out)), -1.0),)

    out = _record("reciprocal", 1.0 / x.data, (x,), vjp)
    return out


def rsqrt(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = None

    def vjp(g, needs):
        return (scale(mul(g, mul(out, square(out))), -0.5),)

    out = _record("reciprocal_sqrt", 1.0 / np.sqrt(x.data), (x,), vjp)
    return out


def l2_norm(x: Tensor) -> Tensor:
    """Euclidean norm over the last axis; the gradient at a zero vector is zero."""
    x = as_tensor(x)
    out = None

    def vjp(g, needs):
        safe = add(out, (out.data == 0.0).astype(np.float64))
        ratio = reshape(mul(g, reciprocal(safe)), out.shape + (1,))
        return (mul(ratio, x),)

    out = _record("l2_norm", np.sqrt(np.sum(x.data * x.data, axis=-1)), (x,), vjp)
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g, needs):
        grads = []
        for k, need in enumerate(needs):
            if not need:
                grads.append(None)
                continue
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(int(bounds[k]), int(bounds[k + 1]))
            grads.append(getitem(g, tuple(idx)))
        return tuple(grads)

    return _record("concat", out, tensors, vjp)


def getitem(x: Tensor, idx) -> Tensor:
    x = as_tensor(x)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.intp)
    return _record("getitem", x.data[idx], (x,), lambda g, needs: (scatter(g, idx, x.shape),))


def scatter(x: Tensor, idx, shape) -> Tensor:
    """Zeros of ``shape`` with ``x`` added at ``idx`` (adjoint of indexing)."""
    out = np.zeros(shape)
    np.add.at(out, idx, x.data)
    return _record("scatter", out, (x,), lambda g, needs: (getitem(g, idx),))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > floor).astype(np.float64)
    return _record(
        "clamp_min", np.maximum(x.data, floor), (x,), lambda g, needs: (mul(g, mask),), twice=False
    )


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    factor = np.where(x.data > 0, 1.0, slope)
    return _record(
        "leaky_relu", x.data * factor, (x,), lambda g, needs: (mul(g, factor),), twice=False
    )


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard`` exactly; gradient flows to ``soft`` unchanged."""
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: shapes {hard.shape} and {soft.shape} differ")
    return _record("straight_through", hard.copy(), (soft,), lambda g, needs: (g,))


def forward_op(kind: str, inputs: Sequence) -> Tensor:
    """Dispatch a named op; convenience for table-driven tests and tooling."""
    try:
        fn = _OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    return fn(*inputs)


_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "matvec": matvec,
    "linear": linear,
    "add": add,
    "subtract": sub,
    "multiply": mul,
    "scale": scale,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "tanh": tanh,
    "softplus": softplus,
    "square": square,
    "sum": tsum,
    "mean": mean,
    "l2_norm": l2_norm,
    "concat": lambda *ts: concat(ts),
    "reciprocal_sqrt": rsqrt,
    "reciprocal": reciprocal,
    "exp": exp,
    "log": log,
    "clamp_min": clamp_min,
    "leaky_relu": leaky_relu,
}
