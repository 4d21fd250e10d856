"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps a float64 ndarray and, when gradients are enabled, remembers
the op that produced it plus its parent tensors. The implicit DAG of these
records is the computation graph; `backward` walks it in reverse topological
order and accumulates d(loss)/d(node) into `Tensor.grad`. Only the op set
needed by the models in this package is implemented; there is no general
broadcasting beyond what those layers use.

Conventions:
- everything is float64 (`FLOAT`); oracles and tests rely on it
- `no_grad()` disables graph recording, e.g. for evaluation loops
- ops take Tensors; plain arrays/floats are wrapped as constants
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

FLOAT = np.float64

_grad_enabled = True

# Optional per-op finiteness checking; expensive, enabled in a few tests.
CHECK_FINITE = False


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense n-dimensional float64 array, optionally a node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray) and data.dtype == FLOAT:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=FLOAT)
        self.grad = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    # Operator sugar; all dispatch to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(rng: np.random.Generator, shape, scale: float = 0.1) -> Tensor:
    """Trainable tensor initialized uniform(-scale, scale)."""
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


def zeros_parameter(shape) -> Tensor:
    """Trainable tensor initialized to zeros (biases, CRF scores, zero embeddings)."""
    return Tensor(np.zeros(shape, dtype=FLOAT), requires_grad=True)


def _make(data: np.ndarray, parents: tuple, bw: Callable, op: str) -> Tensor:
    if CHECK_FINITE and not np.isfinite(data).all():
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    out = Tensor(data)
    if _grad_enabled:
        grad_parents = tuple(p for p in parents if p.requires_grad)
        if grad_parents:
            out.requires_grad = True
            out.op = op
            out._parents = grad_parents
            out._backward = bw
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _make(out, (a, b), bw, "mul")


def neg(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.grad -= g

    return _make(-a.data, (a,), bw, "neg")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        if a.requires_grad:
            a.grad += g * (1.0 - out * out)

    return _make(out, (a,), bw, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-a.data))

    def bw(g):
        if a.requires_grad:
            a.grad += g * out * (1.0 - out)

    return _make(out, (a,), bw, "sigmoid")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def bw(g):
        if a.requires_grad:
            a.grad += g * out

    return _make(out, (a,), bw, "exp")


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def bw(g):
        if a.requires_grad:
            a.grad += g / a.data

    return _make(out, (a,), bw, "log")


# ---------------------------------------------------------------------------
# linear algebra / shape ops
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    an, bn = a.data.ndim, b.data.ndim
    out = a.data @ b.data

    def bw(g):
        if an == 1 and bn == 1:
            if a.requires_grad:
                a.grad += g * b.data
            if b.requires_grad:
                b.grad += g * a.data
        elif an == 1 and bn == 2:
            if a.requires_grad:
                a.grad += b.data @ g
            if b.requires_grad:
                b.grad += np.outer(a.data, g)
        elif an == 2 and bn == 1:
            if a.requires_grad:
                a.grad += np.outer(g, b.data)
            if b.requires_grad:
                b.grad += a.data.T @ g
        elif an == 2 and bn == 2:
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += a.data.T @ g
        elif an == 3 and bn == 2:
            if a.requires_grad:
                a.grad += g @ b.data.T
            if b.requires_grad:
                b.grad += np.tensordot(a.data, g, axes=([0, 1], [0, 1]))
        elif an == 3 and bn == 3:
            if a.requires_grad:
                a.grad += g @ b.data.swapaxes(-1, -2)
            if b.requires_grad:
                b.grad += a.data.swapaxes(-1, -2) @ g
        else:  # pragma: no cover - guarded by forward np.matmul
            raise NotImplementedError(f"matmul backward for ndim {an}x{bn}")

    return _make(out, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    def bw(g):
        if a.requires_grad:
            a.grad += g.T

    return _make(a.data.T.copy(), (a,), bw, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape

    def bw(g):
        if a.requires_grad:
            a.grad += g.reshape(old)

    return _make(a.data.reshape(shape).copy(), (a,), bw, "reshape")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += g  # scalar broadcast
        elif keepdims:
            a.grad += g
        else:
            a.grad += np.expand_dims(g, axis)

    return _make(out, (a,), bw, "sum")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.grad += g[tuple(sl)]

    return _make(out, tuple(tensors), bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += np.take(g, i, axis=axis)

    return _make(out, tuple(tensors), bw, "stack")


def select(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Pick one slice along `axis` (the axis is dropped)."""
    out = np.take(a.data, index, axis=axis)

    def bw(g):
        if a.requires_grad:
            sl = [slice(None)] * a.data.ndim
            sl[axis] = index
            a.grad[tuple(sl)] += g

    return _make(out, (a,), bw, "select")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        if a.requires_grad:
            a.grad[sl] += g

    return _make(a.data[sl].copy(), (a,), bw, "narrow")


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row lookup: out[..., :] = table[ids[...], :]. Backward scatter-adds."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.data[ids]

    def bw(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)

    return _make(out, (table,), bw, "gather_rows")


def gather_nd(a: Tensor, idx: tuple) -> Tensor:
    """Fancy-index with a tuple of integer arrays; backward scatter-adds."""
    out = a.data[idx]

    def bw(g):
        if a.requires_grad:
            np.add.at(a.grad, idx, g)

    return _make(out, (a,), bw, "gather_nd")


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: E[output] equals the identity map."""
    if rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask))


# ---------------------------------------------------------------------------
# reductions in log space
# ---------------------------------------------------------------------------


def logsumexp(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """log-sum-exp of a tensor, max-shifted for stability; differentiable."""
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = sub(a, Tensor(m))
    s = tsum(exp(shifted), axis=axis, keepdims=True)
    out = add(log(s), Tensor(m))
    if not keepdims:
        if axis is None:
            out = reshape(out, ())
        else:
            out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along `axis`; shift-invariant and sums to one along the axis."""
    return exp(sub(a, logsumexp(a, axis=axis, keepdims=True)))


# ---------------------------------------------------------------------------
# numeric (non-graph) helpers
# ---------------------------------------------------------------------------


def log_sum_exp(values) -> float:
    """log sum exp of a non-empty 1-D collection, max-shifted so |v| <= 700 is safe."""
    v = np.asarray(values, dtype=FLOAT)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    if not np.isfinite(v).all():
        raise ValueError("log_sum_exp requires finite inputs")
    m = float(v.max())
    return m + math.log(float(np.exp(v - m).sum()))


def softmax_values(values) -> np.ndarray:
    """Numeric softmax of a 1-D collection (no graph)."""
    v = np.asarray(values, dtype=FLOAT)
    out = np.exp(v - log_sum_exp(v))
    return out


# ---------------------------------------------------------------------------
# backward pass and gradient checking
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Fill `.grad` on every tensor the scalar `loss` depends on."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    for node in topo:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients of f() and central differences.

    `f` must be a deterministic closure over `params` returning a scalar Tensor.
    Error per element: |a - d| / max(1e-8, |a| + |d|).
    """
    zero_grads(params)
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: non-finite loss")
    backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    max_err = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.ravel()
            aflat = an.ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(f().data)
                flat[i] = orig - eps
                fm = float(f().data)
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise FloatingPointError("grad_check: non-finite perturbed loss")
                num = (fp - fm) / (2.0 * eps)
                err = abs(aflat[i] - num) / max(1e-8, abs(aflat[i]) + abs(num))
                if err > max_err:
                    max_err = err
    return max_err
