"""Dense tensors with reverse-mode automatic differentiation.

The op set is deliberately closed: matrix products, concatenation and
stacking, elementwise arithmetic and activations, bilinear forms,
reductions, and the slicing needed to split gate blocks. That is everything
the chart builder and the training objectives need, and keeps every
gradient rule in this file auditable by hand.

Graphs are built implicitly: each op links its output tensor to the
tracked tensors it was computed from, and ``Tensor.backward`` replays the
chain rule over a topological order of that linkage. Gradient accumulation
is additive, so a parameter used in many chart cells receives the sum of
its per-use contributions.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "GraphError",
    "no_grad",
    "unchecked",
    "set_dtype",
    "get_dtype",
    "constant",
    "parameter",
    "matmul",
    "bilinear",
    "dot",
    "concat",
    "stack",
    "slice_last",
    "expand_dims",
    "broadcast_to",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "relu",
    "max_last",
    "zero_grads",
    "finite_difference_gradient",
]


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or infinity."""


class GraphError(RuntimeError):
    """backward was called on a tensor with no recorded operations."""


_DTYPE = np.float64
_GRAD_ENABLED = True
_CHECK_FINITE = True


def set_dtype(name: str) -> None:
    """Select the element type for newly created tensors.

    "float64" is the default (gradient checks need the headroom);
    "float32" is available as a speed option.
    """
    global _DTYPE
    if name not in ("float64", "float32"):
        raise ValueError(f"unsupported dtype {name!r}")
    _DTYPE = np.float64 if name == "float64" else np.float32


def get_dtype():
    return _DTYPE


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextmanager
def unchecked():
    """Skip per-op finite screening inside the block (used by the
    finite-difference oracle, which validates its own evaluations)."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = False
    try:
        yield
    finally:
        _CHECK_FINITE = prev


def _finite_or_raise(arr, op):
    # The sum is a cheap screen: NaN or +/-inf anywhere poisons it. Mixed
    # +inf/-inf gives NaN, also caught. Re-verify elementwise before raising
    # so an overflowing-but-finite sum cannot produce a false alarm.
    if not math.isfinite(float(arr.sum())):
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"op {op!r} produced non-finite values")


class Tensor:
    """A numpy-backed value in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), op="leaf"):
        arr = np.asarray(data)
        if arr.dtype != _DTYPE:
            arr = arr.astype(_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = op
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    # -- arithmetic sugar -------------------------------------------------

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    # -- reverse pass -----------------------------------------------------

    def backward(self):
        """Accumulate d(self)/d(param) into .grad of every reachable tensor.

        self must hold a single scalar. Unreachable parameters keep the
        zero gradient they were created with.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        if not self._parents and not self.requires_grad:
            raise GraphError(
                "no operations recorded for this tensor; run a forward pass "
                "with gradients enabled first"
            )
        topo = _topo_order(self)
        for node in topo:
            if node.grad is None:
                node.grad = np.zeros(node.data.shape, dtype=node.data.dtype)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()


def _topo_order(root):
    """Parents-before-children ordering of the tracked subgraph under root."""
    topo = []
    seen = {id(root)}
    stack = [(root, 0)]
    while stack:
        node, i = stack.pop()
        parents = node._parents
        if i < len(parents):
            stack.append((node, i + 1))
            child = parents[i]
            if id(child) not in seen:
                seen.add(id(child))
                stack.append((child, 0))
        else:
            topo.append(node)
    return topo


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DTYPE))


def _make(data, parents, op, backward_fn):
    if _CHECK_FINITE:
        _finite_or_raise(data, op)
    if _GRAD_ENABLED:
        tracked = tuple(p for p in parents if p._tracked())
        if tracked:
            out = Tensor(data, parents=tracked, op=op)
            out._backward = backward_fn(out)
            return out
    return Tensor(data, op=op)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise arithmetic (broadcasting) ---------------------------------


def add(a, b):
    a, b = _tensor(a), _tensor(b)
    data = a.data + b.data

    def bw(out):
        def _bw():
            g = out.grad
            if a.grad is not None:
                a.grad += _unbroadcast(g, a.shape)
            if b.grad is not None:
                b.grad += _unbroadcast(g, b.shape)

        return _bw

    return _make(data, (a, b), "add", bw)


def sub(a, b):
    a, b = _tensor(a), _tensor(b)
    data = a.data - b.data

    def bw(out):
        def _bw():
            g = out.grad
            if a.grad is not None:
                a.grad += _unbroadcast(g, a.shape)
            if b.grad is not None:
                b.grad -= _unbroadcast(g, b.shape)

        return _bw

    return _make(data, (a, b), "sub", bw)


def mul(a, b):
    a, b = _tensor(a), _tensor(b)
    data = a.data * b.data

    def bw(out):
        def _bw():
            g = out.grad
            if a.grad is not None:
                a.grad += _unbroadcast(g * b.data, a.shape)
            if b.grad is not None:
                b.grad += _unbroadcast(g * a.data, b.shape)

        return _bw

    return _make(data, (a, b), "mul", bw)


def div(a, b):
    a, b = _tensor(a), _tensor(b)
    data = a.data / b.data

    def bw(out):
        def _bw():
            g = out.grad
            if a.grad is not None:
                a.grad += _unbroadcast(g / b.data, a.shape)
            if b.grad is not None:
                b.grad -= _unbroadcast(g * data / b.data, b.shape)

        return _bw

    return _make(data, (a, b), "div", bw)


def neg(a):
    a = _tensor(a)

    def bw(out):
        def _bw():
            if a.grad is not None:
                a.grad -= out.grad

        return _bw

    return _make(-a.data, (a,), "neg", bw)


# -- linear algebra ---------------------------------------------------------


def matmul(x, w):
    """x @ w.T with w of shape (out, in) and x of shape (..., in)."""
    x, w = _tensor(x), _tensor(w)
    if w.ndim != 2:
        raise ValueError(f"matmul weight must be 2-d, got shape {w.shape}")
    if x.shape[-1] != w.shape[-1]:
        raise ValueError(
            f"matmul shape mismatch: x {x.shape} vs weight {w.shape}"
        )
    data = x.data @ w.data.T

    def bw(out):
        def _bw():
            g = out.grad
            if x.grad is not None:
                x.grad += g @ w.data
            if w.grad is not None:
                g2 = g.reshape(-1, w.shape[0])
                x2 = x.data.reshape(-1, w.shape[1])
                w.grad += g2.T @ x2

        return _bw

    return _make(data, (x, w), "matmul", bw)


def bilinear(u, s, v):
    """The form sum_ij u_i * s_ij * v_j over the last axis, batched."""
    u, s, v = _tensor(u), _tensor(s), _tensor(v)
    d = s.shape
    if s.ndim != 2 or d[0] != d[1]:
        raise ValueError(f"bilinear matrix must be square, got {d}")
    if u.shape[-1] != d[0] or v.shape[-1] != d[0]:
        raise ValueError(
            f"bilinear shape mismatch: u {u.shape}, s {d}, v {v.shape}"
        )
    ub, vb = np.broadcast_arrays(u.data, v.data)
    us = ub @ s.data
    data = (us * vb).sum(axis=-1)

    def bw(out):
        def _bw():
            g = out.grad
            if u.grad is not None:
                u.grad += _unbroadcast(g[..., None] * (vb @ s.data.T), u.shape)
            if v.grad is not None:
                v.grad += _unbroadcast(g[..., None] * us, v.shape)
            if s.grad is not None:
                d = s.shape[0]
                g2 = np.asarray(g).reshape(-1)
                u2 = ub.reshape(-1, d)
                v2 = vb.reshape(-1, d)
                s.grad += u2.T @ (g2[:, None] * v2)

        return _bw

    return _make(data, (u, s, v), "bilinear", bw)


def dot(u, v):
    """Inner product over the last axis, batched over leading axes."""
    u, v = _tensor(u), _tensor(v)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dot shape mismatch: {u.shape} vs {v.shape}")
    ub, vb = np.broadcast_arrays(u.data, v.data)
    data = (ub * vb).sum(axis=-1)

    def bw(out):
        def _bw():
            g = out.grad
            if u.grad is not None:
                u.grad += _unbroadcast(g[..., None] * vb, u.shape)
            if v.grad is not None:
                v.grad += _unbroadcast(g[..., None] * ub, v.shape)

        return _bw

    return _make(data, (u, v), "dot", bw)


# -- shape plumbing ---------------------------------------------------------


def concat(tensors, axis=-1):
    ts = [_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat of nothing")
    data = np.concatenate([t.data for t in ts], axis=axis)
    ax = axis if axis >= 0 else data.ndim + axis
    sizes = [t.shape[ax] for t in ts]

    def bw(out):
        def _bw():
            g = out.grad
            off = 0
            for t, n in zip(ts, sizes):
                if t.grad is not None:
                    idx = [slice(None)] * g.ndim
                    idx[ax] = slice(off, off + n)
                    t.grad += g[tuple(idx)]
                off += n

        return _bw

    return _make(data, tuple(ts), "concat", bw)


def stack(tensors, axis=0):
    ts = [_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("stack of nothing")
    data = np.stack([t.data for t in ts], axis=axis)
    ax = axis if axis >= 0 else data.ndim + axis

    def bw(out):
        def _bw():
            g = np.moveaxis(out.grad, ax, 0)
            for i, t in enumerate(ts):
                if t.grad is not None:
                    t.grad += g[i]

        return _bw

    return _make(data, tuple(ts), "stack", bw)


def slice_last(x, start, stop):
    """x[..., start:stop]; used to split fused gate blocks."""
    x = _tensor(x)
    data = x.data[..., start:stop]

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad[..., start:stop] += out.grad

        return _bw

    return _make(data, (x,), "slice", bw)


def expand_dims(x, axis):
    x = _tensor(x)
    data = np.expand_dims(x.data, axis)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += np.squeeze(out.grad, axis=axis)

        return _bw

    return _make(data, (x,), "expand_dims", bw)


def broadcast_to(x, shape):
    x = _tensor(x)
    data = np.broadcast_to(x.data, shape)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += _unbroadcast(out.grad, x.shape)

        return _bw

    return _make(data, (x,), "broadcast_to", bw)


def reshape(x, shape):
    x = _tensor(x)
    data = x.data.reshape(shape)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad.reshape(x.shape)

        return _bw

    return _make(data, (x,), "reshape", bw)


def tsum(x, axis=None, keepdims=False):
    x = _tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(out):
        def _bw():
            if x.grad is None:
                return
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            x.grad += np.broadcast_to(g, x.shape)

        return _bw

    return _make(data, (x,), "sum", bw)


# -- nonlinearities ----------------------------------------------------------


def sigmoid(x):
    x = _tensor(x)
    # tanh form avoids overflow in exp for large negative inputs
    data = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad * data * (1.0 - data)

        return _bw

    return _make(data, (x,), "sigmoid", bw)


def tanh(x):
    x = _tensor(x)
    data = np.tanh(x.data)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad * (1.0 - data * data)

        return _bw

    return _make(data, (x,), "tanh", bw)


def exp(x):
    x = _tensor(x)
    data = np.exp(x.data)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad * data

        return _bw

    return _make(data, (x,), "exp", bw)


def log(x):
    x = _tensor(x)
    data = np.log(x.data)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad / x.data

        return _bw

    return _make(data, (x,), "log", bw)


def sqrt(x):
    x = _tensor(x)
    data = np.sqrt(x.data)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad * 0.5 / data

        return _bw

    return _make(data, (x,), "sqrt", bw)


def relu(x):
    """max(0, x) elementwise; subgradient 0 at the kink."""
    x = _tensor(x)
    data = np.maximum(x.data, 0.0)

    def bw(out):
        def _bw():
            if x.grad is not None:
                x.grad += out.grad * (x.data > 0.0)

        return _bw

    return _make(data, (x,), "relu", bw)


def max_last(x, keepdims=True) -> np.ndarray:
    """Detached max over the last axis, for softmax shift stability.

    Subtracting any constant leaves a softmax (and log-sum-exp, after adding
    it back) algebraically unchanged, so treating the shift as a constant
    keeps gradients exact.
    """
    x = _tensor(x)
    return np.max(x.data, axis=-1, keepdims=keepdims)


# -- utilities ---------------------------------------------------------------


def zero_grads(tensors) -> None:
    for t in tensors:
        if t.grad is not None:
            t.grad.fill(0.0)
        elif t.requires_grad:
            t.grad = np.zeros_like(t.data)


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def finite_difference_gradient(f, params, step=1e-5):
    """Central-difference gradient estimate of f() w.r.t. each parameter.

    f is re-evaluated with single elements perturbed in place, so it must be
    deterministic given the parameter values. Returns one array per
    parameter, aligned with `params`.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grads = []
    with no_grad(), unchecked():
        for p in params:
            g = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            gflat = g.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalar(f())
                flat[i] = orig - step
                fm = _scalar(f())
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    raise NonFiniteError("objective evaluated to a non-finite value")
                gflat[i] = (fp - fm) / (2.0 * step)
            grads.append(g)
    return grads
