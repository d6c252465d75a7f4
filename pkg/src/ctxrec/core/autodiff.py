"""Reverse-mode automatic differentiation over dense numpy arrays.

A minimal tape: every operation returns a :class:`Tensor` node holding the
forward value plus a closure that routes the upstream gradient to the node's
parents. Gradients accumulate additively, so a leaf consumed twice receives
the sum of both paths. Elementwise activation loops are delegated to the
selected kernel backend (compiled extension or numpy fallback).

Values are contiguous row-major float32 by default; tests and gradient
oracles switch to float64 via :func:`set_default_dtype`. Every exported
operation checks its result for NaN/Inf unless finite checking is disabled
(``set_finite_checks(False)`` or ``CTXREC_UNCHECKED=1``).

Tensors are plain values and safe to share between threads once created;
graph construction and backward are single-threaded per loss.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from ..errors import ConfigError, ShapeError, StateError
from .backend import kernels

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = os.environ.get("CTXREC_UNCHECKED", "") != "1"


def set_default_dtype(dtype) -> None:
    """Set the dtype for new tensors: float32 (train) or float64 (test/oracle)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.float32, np.float64):
        raise ConfigError(f"unsupported dtype {dt}")
    _DEFAULT_DTYPE = dt.type


def default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (used by oracle/test code)."""
    global _DEFAULT_DTYPE
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


def set_finite_checks(enabled: bool) -> None:
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


@contextmanager
def no_grad():
    """Disable graph construction (evaluation paths)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """One node of the tape: a value, and optionally a gradient route."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn", "_done")

    def __init__(self, data, requires_grad=False, grad_buffer=None):
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = grad_buffer
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents = ()
        self._backward_fn = None
        self._done = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _op(data, parents, backward_fn):
        needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=needs)
        if needs:
            out._parents = tuple(parents)
            out._backward_fn = backward_fn
        if _CHECK_FINITE and not np.all(np.isfinite(out.data)):
            raise FloatingPointError("non-finite value produced by tensor operation")
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- introspection --------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, -other)
        if isinstance(other, (int, float)):
            return add(self, -float(other))
        return add(self, np.negative(np.asarray(other)))

    def __rsub__(self, other):
        return add(-self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(other))


def tensor(data) -> Tensor:
    """Wrap raw data as a constant (no gradient) tensor in the active dtype."""
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- broadcasting -------------------------------------------------------------
#
# Only the shapes this model needs: equal shapes, a trailing-shape operand
# against a batch (e.g. (B,n) op (n,)), and scalars. Anything else is a
# ShapeError rather than silent numpy broadcasting.


def _broadcast_ok(a_shape, b_shape):
    if a_shape == b_shape:
        return True
    small, big = sorted((a_shape, b_shape), key=len)
    return len(big) > len(small) and big[len(big) - len(small):] == small


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverses trailing-shape broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    return grad


def _binary_shapes(a, b, op_name):
    if not _broadcast_ok(a.data.shape, b.data.shape):
        raise ShapeError(f"{op_name}: incompatible shapes {a.data.shape} and {b.data.shape}")


# -- arithmetic ----------------------------------------------------------------


def _is_pyscalar(x) -> bool:
    return isinstance(x, (int, float)) or (isinstance(x, np.generic) and x.ndim == 0)


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_pyscalar(b):
        out_data = a.data + _DEFAULT_DTYPE(b)

        def bwd_scalar(g, out):
            if a.requires_grad:
                a._accumulate(g)

        return Tensor._op(out_data, (a,), bwd_scalar)
    b = _as_tensor(b)
    _binary_shapes(a, b, "add")

    def bwd(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor._op(a.data + b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    if _is_pyscalar(b):
        s = _DEFAULT_DTYPE(b)

        def bwd_scalar(g, out):
            if a.requires_grad:
                a._accumulate(g * s)

        return Tensor._op(a.data * s, (a,), bwd_scalar)
    b = _as_tensor(b)
    _binary_shapes(a, b, "mul")

    def bwd(g, out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._op(a.data * b.data, (a, b), bwd)


def square(x) -> Tensor:
    x = _as_tensor(x)

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g * (2.0 * x.data))

    return Tensor._op(x.data * x.data, (x,), bwd)


# -- linear algebra -------------------------------------------------------------


def matvec(W, x) -> Tensor:
    """y_i = sum_j W[i,j] x[j] for a 2-D weight and 1-D input."""
    W, x = _as_tensor(W), _as_tensor(x)
    if W.data.ndim != 2 or x.data.ndim != 1 or W.data.shape[1] != x.data.shape[0]:
        raise ShapeError(f"matvec: W{W.data.shape} incompatible with x{x.data.shape}")

    def bwd(g, out):
        if W.requires_grad:
            W._accumulate(np.outer(g, x.data))
        if x.requires_grad:
            x._accumulate(W.data.T @ g)

    return Tensor._op(W.data @ x.data, (W, x), bwd)


def linear(x, W) -> Tensor:
    """Row-wise map through W: (B,n) @ W(m,n)^T -> (B,m); also accepts 1-D x."""
    x, W = _as_tensor(x), _as_tensor(W)
    if W.data.ndim != 2:
        raise ShapeError(f"linear: weight must be 2-D, got {W.data.shape}")
    if x.data.ndim == 1:
        return matvec(W, x)
    if x.data.ndim != 2 or x.data.shape[1] != W.data.shape[1]:
        raise ShapeError(f"linear: x{x.data.shape} incompatible with W{W.data.shape}")

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g @ W.data)
        if W.requires_grad:
            W._accumulate(g.T @ x.data)

    return Tensor._op(x.data @ W.data.T, (x, W), bwd)


def dotv(x, w) -> Tensor:
    """Per-row dot with a shared vector: (B,n)·(n,) -> (B,); (n,)·(n,) -> scalar."""
    x, w = _as_tensor(x), _as_tensor(w)
    if w.data.ndim != 1 or x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"dotv: x{x.data.shape} incompatible with w{w.data.shape}")

    def bwd(g, out):
        if x.requires_grad:
            if x.data.ndim == 1:
                x._accumulate(g * w.data)
            else:
                x._accumulate(np.outer(g, w.data))
        if w.requires_grad:
            if x.data.ndim == 1:
                w._accumulate(g * x.data)
            else:
                w._accumulate(g @ x.data)

    return Tensor._op(x.data @ w.data, (x, w), bwd)


def rowdot(a, b) -> Tensor:
    """Row-wise dot product of two equal-shape (B,n) tensors -> (B,)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"rowdot: need equal 2-D shapes, got {a.data.shape} / {b.data.shape}")

    def bwd(g, out):
        if a.requires_grad:
            a._accumulate(g[:, None] * b.data)
        if b.requires_grad:
            b._accumulate(g[:, None] * a.data)

    return Tensor._op(np.einsum("ij,ij->i", a.data, b.data), (a, b), bwd)


# -- activations (kernel-backed) -------------------------------------------------


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = kernels.sigmoid(x.data)

    def bwd(g, out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            kernels.sigmoid_backward(out.data, g, x.grad)

    return Tensor._op(y, (x,), bwd)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = kernels.tanh(x.data)

    def bwd(g, out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            kernels.tanh_backward(out.data, g, x.grad)

    return Tensor._op(y, (x,), bwd)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    y = kernels.relu(x.data)

    def bwd(g, out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            kernels.relu_backward(out.data, g, x.grad)

    return Tensor._op(y, (x,), bwd)


def identity(x) -> Tensor:
    """Pass-through activation (test mode for algebraic property checks)."""
    return _as_tensor(x)


ACTIVATIONS = {"sigmoid": sigmoid, "tanh": tanh, "relu": relu, "identity": identity}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: binary {add, mul} (equal shapes) or unary
    {sigmoid, tanh, relu}."""
    if op in ("add", "mul"):
        if b is None:
            raise ShapeError(f"{op} is binary")
        a, b = _as_tensor(a), _as_tensor(b)
        if a.data.shape != b.data.shape:
            raise ShapeError(f"{op}: shapes must match, got {a.data.shape} / {b.data.shape}")
        return add(a, b) if op == "add" else mul(a, b)
    if op in ("sigmoid", "tanh", "relu"):
        if b is not None:
            raise ShapeError(f"{op} is unary")
        return ACTIVATIONS[op](a)
    raise ConfigError(f"unknown elementwise op {op!r}")


# -- transcendental -------------------------------------------------------------


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):  # overflow surfaces via the finite check
        y = np.exp(x.data)

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g * out.data)

    return Tensor._op(y, (x,), bwd)


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g / x.data)

    return Tensor._op(y, (x,), bwd)


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    y = np.sqrt(x.data)

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g * (0.5 / out.data))

    return Tensor._op(y, (x,), bwd)


# -- reductions / reshaping ------------------------------------------------------


def sum_(x, axis=None) -> Tensor:
    x = _as_tensor(x)

    def bwd(g, out):
        if not x.requires_grad:
            return
        if axis is None:
            x._accumulate(np.full_like(x.data, g))
        else:
            x._accumulate(np.broadcast_to(np.expand_dims(g, axis), x.data.shape).copy())

    return Tensor._op(np.sum(x.data, axis=axis), (x,), bwd)


def mean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return sum_(x, axis=axis) / float(n)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}")

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g.reshape(x.data.shape))

    return Tensor._op(x.data.reshape(shape), (x,), bwd)


def concat(parts, axis=-1) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    widths = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + widths)

    def bwd(g, out):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                p._accumulate(np.ascontiguousarray(g[tuple(idx)]))

    return Tensor._op(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def slice_cols(x, start, stop) -> Tensor:
    """Contiguous slice along the last axis."""
    x = _as_tensor(x)

    def bwd(g, out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[..., start:stop] += g

    return Tensor._op(np.ascontiguousarray(x.data[..., start:stop]), (x,), bwd)


def slice_rows(x, start, stop) -> Tensor:
    """Contiguous slice along the first axis."""
    x = _as_tensor(x)

    def bwd(g, out):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[start:stop] += g

    return Tensor._op(np.ascontiguousarray(x.data[start:stop]), (x,), bwd)


def gather_rows(table, idx) -> Tensor:
    """Select rows of a 2-D table; gradient scatter-adds into those rows only."""
    table = _as_tensor(table)
    idx = np.asarray(idx)
    if table.data.ndim != 2:
        raise ShapeError(f"gather_rows: table must be 2-D, got {table.data.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"row index out of range for table with {table.data.shape[0]} rows")

    def bwd(g, out):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, g)

    return Tensor._op(table.data[idx], (table,), bwd)


def dropout(x, rate: float, rng, training: bool) -> Tensor:
    """Inverted dropout: zero a `rate` fraction and rescale survivors by 1/(1-rate).

    Identity in eval mode or at rate 0. E[dropout(x)] = x elementwise.
    """
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    keep *= x.data.dtype.type(1.0 / (1.0 - rate))

    def bwd(g, out):
        if x.requires_grad:
            x._accumulate(g * keep)

    return Tensor._op(x.data * keep, (x,), bwd)


# -- backward --------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate gradients of every reachable requires_grad leaf from a scalar loss."""
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._done:
        raise StateError("backward called twice on the same graph; re-run the forward pass")
    loss._done = True
    if not loss.requires_grad:
        return

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn(node.grad, node)
            # interior grads are single-use; free them eagerly
            if node._parents:
                node.grad = None
                node._backward_fn = None
                node._parents = ()
