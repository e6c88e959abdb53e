"""Dense float64 tensors with reverse-mode automatic differentiation.

Design: define-by-run. Every differentiable op appends a record to an
ambient, thread-local gradient tape; ``backward(loss)`` walks the tape in
reverse, accumulating gradients into ``.grad`` with ``+=`` so parameters
shared across ops (or across micro-batches) sum their contributions.
The tape is cleared when backward finishes.

Broadcasting is deliberately restricted: binary ops accept operands of
equal shape, or one scalar (0-d) with one tensor. The single sanctioned
row broadcast is ``add_bias`` (matrix + bias row), which exists so affine
layers do not need materialized bias tiles. Anything fancier is a shape
error, not a silent NumPy broadcast.

Every op checks its output for NaN/Inf and raises NumericError at the op
boundary, so a numeric failure names the op that produced it instead of
surfacing as a corrupted loss ten calls later.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy import special

from .errors import NumericError

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class GradTape:
    """Ordered record of differentiable ops for one backward pass."""

    __slots__ = ("records",)

    def __init__(self):
        # each record: (output Tensor, backward closure taking g_out)
        self.records = []


_tls = threading.local()


def _state():
    st = getattr(_tls, "state", None)
    if st is None:
        st = _tls.state = {"tape": GradTape(), "record": True}
    return st


def tape_length():
    """Number of op records on the current thread's tape (diagnostics)."""
    return len(_state()["tape"].records)


@contextmanager
def no_record():
    """Disable tape recording within the block (pure inference forward)."""
    st = _state()
    prev = st["record"]
    st["record"] = False
    try:
        yield
    finally:
        st["record"] = prev


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by {what}")


class Tensor:
    """A dense float64 array plus an accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; floats are promoted to scalar constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def mean(self, axis=None):
        return tensor_mean(self, axis=axis)

    def std(self, axis=None):
        return tensor_std(self, axis=axis)

    def min(self, axis=None):
        return tensor_min(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])


def parameter(data):
    """A trainable tensor (participates in gradients)."""
    return Tensor(data, requires_grad=True)


def constant(data):
    """A non-trainable tensor."""
    return Tensor(data, requires_grad=False)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _wrap(arr):
    # fast internal constructor: data already validated by the op
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    return t


def _accumulate(t, g):
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.data.shape:
        # scalar tensor receiving an array gradient: sum contributions
        if t.data.ndim == 0:
            g = np.sum(g)
        else:
            raise NumericError(
                f"gradient shape {g.shape} does not match tensor shape {t.data.shape}"
            )
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _record(out, inputs, backward_fn):
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        st = _state()
        if st["record"]:
            st["tape"].records.append((out, backward_fn))
    return out


def backward(loss):
    """Reverse sweep from a scalar loss; clears the tape afterwards.

    Gradients accumulate into ``.grad`` (+=); callers zero parameter grads
    between optimizer steps.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.ndim != 0:
        raise NumericError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = _state()["tape"]
    try:
        if loss.requires_grad:
            _accumulate(loss, np.ones((), dtype=np.float64))
            for out, bwd in reversed(tape.records):
                g = out.grad
                if g is None:
                    continue
                bwd(g)
    finally:
        tape.records.clear()


def _binary_shapes(name, a, b):
    if a.data.shape == b.data.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise NumericError(
        f"{name}: operands must have equal shapes or one scalar, "
        f"got {a.data.shape} and {b.data.shape}"
    )


def _reduce_to(g, shape):
    # inverse of scalar-with-tensor broadcasting
    if g.shape == shape:
        return g
    return np.sum(g)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("add", a, b)
    out_data = a.data + b.data
    _check_finite(out_data, "add")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(g, b.data.shape))

    return _record(out, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("sub", a, b)
    out_data = a.data - b.data
    _check_finite(out_data, "sub")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, _reduce_to(g, a.data.shape))
        _accumulate(b, _reduce_to(-g, b.data.shape))

    return _record(out, (a, b), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("mul", a, b)
    out_data = a.data * b.data
    _check_finite(out_data, "mul")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, _reduce_to(g * b.data, a.data.shape))
        _accumulate(b, _reduce_to(g * a.data, b.data.shape))

    return _record(out, (a, b), bwd)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes("div", a, b)
    if np.any(b.data == 0.0):
        raise NumericError("div: division by zero")
    out_data = a.data / b.data
    _check_finite(out_data, "div")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, _reduce_to(g / b.data, a.data.shape))
        _accumulate(b, _reduce_to(-g * out_data / b.data, b.data.shape))

    return _record(out, (a, b), bwd)


def neg(a):
    a = _as_tensor(a)
    out = _wrap(-a.data)

    def bwd(g):
        _accumulate(a, -g)

    return _record(out, (a,), bwd)


def exp(a):
    a = _as_tensor(a)
    with np.errstate(over="ignore"):  # overflow becomes a NumericError below
        out_data = np.exp(a.data)
    _check_finite(out_data, "exp")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g * out_data)

    return _record(out, (a,), bwd)


def log(a):
    a = _as_tensor(a)
    if np.any(a.data <= 0.0):
        raise NumericError("log: argument must be strictly positive")
    out_data = np.log(a.data)
    _check_finite(out_data, "log")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _record(out, (a,), bwd)


def sqrt(a):
    """Elementwise square root.

    Negative inputs are a domain error. At exactly zero the forward value
    is 0 and the backward pass uses subgradient 0 (instead of the infinite
    true derivative); this pairs with losses that clamp radicands at zero.
    """
    a = _as_tensor(a)
    if np.any(a.data < 0.0):
        raise NumericError("sqrt: argument must be non-negative")
    out_data = np.sqrt(a.data)
    out = _wrap(out_data)

    def bwd(g):
        grad = np.zeros_like(out_data)
        nz = out_data > 0.0
        np.divide(g * 0.5, out_data, out=grad, where=nz)
        _accumulate(a, grad)

    return _record(out, (a,), bwd)


def maximum(a, c):
    """Elementwise max(a, c) with a float constant; subgradient 0 at a == c."""
    a = _as_tensor(a)
    c = float(c)
    out_data = np.maximum(a.data, c)
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g * (a.data > c))

    return _record(out, (a,), bwd)


def sigmoid(a):
    a = _as_tensor(a)
    out_data = special.expit(a.data)
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _record(out, (a,), bwd)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _record(out, (a,), bwd)


def softplus(a):
    """log(1 + exp(x)), computed stably for large |x|."""
    a = _as_tensor(a)
    out_data = np.logaddexp(0.0, a.data)
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g * special.expit(a.data))

    return _record(out, (a,), bwd)


def normal_cdf(a):
    """Standard Gaussian CDF, computed from the error function."""
    a = _as_tensor(a)
    out_data = special.ndtr(a.data)
    out = _wrap(out_data)

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        _accumulate(a, g * pdf)

    return _record(out, (a,), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise NumericError(
            f"matmul: expects 2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise NumericError(
            f"matmul: inner dimensions disagree, {a.data.shape} @ {b.data.shape}"
        )
    out_data = a.data @ b.data
    _check_finite(out_data, "matmul")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _record(out, (a, b), bwd)


def add_bias(m, bias):
    """Affine bias: (N, K) matrix plus (K,) row vector.

    The one sanctioned row broadcast in the engine; exists so affine layers
    avoid materializing tiled bias matrices.
    """
    m, bias = _as_tensor(m), _as_tensor(bias)
    if m.data.ndim != 2 or bias.data.ndim != 1 or m.data.shape[1] != bias.data.shape[0]:
        raise NumericError(
            f"add_bias: expects (N, K) + (K,), got {m.data.shape} and {bias.data.shape}"
        )
    out_data = m.data + bias.data[np.newaxis, :]
    _check_finite(out_data, "add_bias")
    out = _wrap(out_data)

    def bwd(g):
        _accumulate(m, g)
        _accumulate(bias, g.sum(axis=0))

    return _record(out, (m, bias), bwd)


def tensor_sum(a, axis=None):
    a = _as_tensor(a)
    out_data = np.sum(a.data, axis=axis)
    _check_finite(out_data, "sum")
    out = _wrap(out_data)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _record(out, (a,), bwd)


def tensor_mean(a, axis=None):
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    if n == 0:
        raise NumericError("mean: empty reduction")
    out_data = np.mean(a.data, axis=axis)
    _check_finite(out_data, "mean")
    out = _wrap(out_data)

    def bwd(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g / n, a.data.shape).copy())
        else:
            _accumulate(a, np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).copy())

    return _record(out, (a,), bwd)


def tensor_std(a, axis=None):
    """Population standard deviation (ddof=0).

    Subgradient 0 when the deviation is exactly zero (constant input).
    """
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    if n == 0:
        raise NumericError("std: empty reduction")
    mu = np.mean(a.data, axis=axis, keepdims=True)
    centered = a.data - mu
    out_data = np.sqrt(np.mean(centered * centered, axis=axis))
    _check_finite(out_data, "std")
    out = _wrap(out_data)

    def bwd(g):
        if axis is None:
            s = out_data
            if s == 0.0:
                return
            _accumulate(a, (g / (n * s)) * centered)
        else:
            s = np.expand_dims(out_data, axis)
            ge = np.expand_dims(g, axis)
            grad = np.zeros_like(a.data)
            nz = s != 0.0
            np.divide(ge * centered, n * s, out=grad, where=nz)
            _accumulate(a, grad)

    return _record(out, (a,), bwd)


def tensor_min(a, axis=None):
    """Min reduction; the subgradient routes to the first attaining index."""
    a = _as_tensor(a)
    if a.data.size == 0:
        raise NumericError("min: empty reduction")
    out_data = np.min(a.data, axis=axis)
    out = _wrap(out_data)

    def bwd(g):
        grad = np.zeros_like(a.data)
        if axis is None:
            idx = np.unravel_index(np.argmin(a.data), a.data.shape)
            grad[idx] = g
        else:
            idx = np.argmin(a.data, axis=axis)
            ge = np.asarray(g)
            np.put_along_axis(
                grad, np.expand_dims(idx, axis), np.expand_dims(ge, axis), axis
            )
        _accumulate(a, grad)

    return _record(out, (a,), bwd)


def index(a, idx):
    """Basic indexing (ints, slices, tuples thereof); gradient scatters back."""
    a = _as_tensor(a)
    out_data = np.array(a.data[idx], dtype=np.float64)
    out = _wrap(out_data)

    def bwd(g):
        grad = np.zeros_like(a.data)
        grad[idx] += g
        _accumulate(a, grad)

    return _record(out, (a,), bwd)


def reshape(a, shape):
    a = _as_tensor(a)
    out_data = np.reshape(a.data, shape)
    out = _wrap(out_data.copy())

    def bwd(g):
        _accumulate(a, np.reshape(g, a.data.shape))

    return _record(out, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise NumericError("concat: empty input list")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    out = _wrap(out_data)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _record(out, tuple(tensors), bwd)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise NumericError("stack: empty input list")
    out_data = np.stack([t.data for t in tensors], axis=axis)
    out = _wrap(out_data)

    def bwd(g):
        for i, t in enumerate(tensors):
            _accumulate(t, np.take(g, i, axis=axis))

    return _record(out, tuple(tensors), bwd)
