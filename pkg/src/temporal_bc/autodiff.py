"""Minimal reverse-mode automatic differentiation over float64 arrays.

A :class:`Tensor` wraps a numpy array. Every op computes its result eagerly
and, while a :class:`Tape` is active and any input requires a gradient,
appends the result to the tape together with a backward rule. The tape's
creation order is a topological order of the computation graph, so
:func:`backward` simply walks it in reverse and accumulates gradients into
``.grad``. With no active tape, ops are plain numpy (inference mode).

Elementwise ops broadcast like numpy; matmul broadcasts over leading batch
dimensions only. All data is float64; gradients are verified against central
finite differences by :func:`gradcheck`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

_MASK_FILL = -1e30  # additive surrogate for -inf; exact zeros after softmax


class Tape:
    """Ordered record of op results for one forward pass."""

    _active: "Tape | None" = None

    def __init__(self):
        self.nodes: list["Tensor"] = []

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise NumericError("nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, *exc):
        Tape._active = None
        return False


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return "Tensor(shape=%r, requires_grad=%r)" % (self.shape, self.requires_grad)

    # arithmetic sugar; all routes through the module-level ops
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(out: Tensor, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = Tape._active
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
        tape.nodes.append(out)
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = grad if t.grad is None else t.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _record(out, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data**2), b.shape))

    return _record(out, (a, b), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise NumericError(
            "matmul requires >=2-D operands, got shapes %r and %r" % (a.shape, b.shape)
        )
    if a.shape[-1] != b.shape[-2]:
        raise NumericError(
            "matmul inner-dimension mismatch: %r @ %r" % (a.shape, b.shape)
        )
    try:
        out = Tensor(np.matmul(a.data, b.data))
    except ValueError:
        raise NumericError(
            "matmul batch-dimension mismatch: %r @ %r" % (a.shape, b.shape)
        )

    def backward_fn(g):
        _accumulate(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        _accumulate(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _record(out, (a, b), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = tuple(_as_tensor(t) for t in tensors)
    if not parts:
        raise NumericError("concat needs at least one tensor")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accumulate(part, piece)

    return _record(out, parts, backward_fn)


def _is_basic_key(key) -> bool:
    if isinstance(key, tuple):
        return all(_is_basic_key(k) for k in key)
    return key is None or key is Ellipsis or isinstance(key, (int, slice))


def index(a: Tensor, key) -> Tensor:
    """Numpy indexing (ints, slices, ellipsis, index arrays); the gradient
    scatters back, summing over any repeated fancy indices."""
    out = Tensor(a.data[key])
    basic = _is_basic_key(key)

    def backward_fn(g):
        buf = np.zeros_like(a.data)
        if basic:
            buf[key] += g
        else:
            np.add.at(buf, key, g)
        _accumulate(a, buf)

    return _record(out, (a,), backward_fn)


def transpose_last_two(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise NumericError("transpose_last_two needs >=2-D input, got %r" % (a.shape,))
    out = Tensor(np.swapaxes(a.data, -1, -2))

    def backward_fn(g):
        _accumulate(a, np.swapaxes(g, -1, -2))

    return _record(out, (a,), backward_fn)


def _restore_axes(g, axis, keepdims, shape):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))

    def backward_fn(g):
        _accumulate(a, _restore_axes(g, axis, keepdims, a.shape))

    return _record(out, (a,), backward_fn)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(np.mean(a.data, axis=axis, keepdims=keepdims))
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in np.atleast_1d(axis)]
    )

    def backward_fn(g):
        _accumulate(a, _restore_axes(g, axis, keepdims, a.shape) / count)

    return _record(out, (a,), backward_fn)


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data))

    def backward_fn(g):
        _accumulate(a, g * out.data)

    return _record(out, (a,), backward_fn)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))

    def backward_fn(g):
        _accumulate(a, g / a.data)

    return _record(out, (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))

    def backward_fn(g):
        _accumulate(a, g * (1.0 - out.data**2))

    return _record(out, (a,), backward_fn)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably for large |x|."""
    out = Tensor(np.logaddexp(0.0, a.data))

    def backward_fn(g):
        # sigmoid via tanh keeps full precision on both tails
        _accumulate(a, g * 0.5 * (1.0 + np.tanh(0.5 * a.data)))

    return _record(out, (a,), backward_fn)


def masked_softmax(logits: Tensor, mask) -> Tensor:
    """Softmax over the last axis with ``mask == True`` positions zeroed.

    Masked positions get weight exactly 0.0 and act as constants in the
    backward pass. A row with every position masked yields all zeros rather
    than NaN.
    """
    m = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    z = np.where(m, _MASK_FILL, logits.data)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(m, 0.0, np.exp(z))
    denom = e.sum(axis=-1, keepdims=True)
    safe = np.where(denom == 0.0, 1.0, denom)
    weights = e / safe
    out = Tensor(weights)

    def backward_fn(g):
        inner = (g * weights).sum(axis=-1, keepdims=True)
        _accumulate(logits, (g - inner) * weights)

    return _record(out, (logits,), backward_fn)


def backward(loss: Tensor) -> dict:
    """Reverse sweep from a scalar loss recorded on the active tape.

    Returns a map from each leaf tensor (requires_grad inputs that are not
    themselves op results) to its gradient; gradients are also left on the
    ``.grad`` attribute of every reachable tensor. ``loss.grad`` ends as 1.
    """
    tape = Tape._active
    if tape is None:
        raise NumericError("backward requires an active Tape")
    if loss.data.size != 1:
        raise NumericError("loss must be scalar, got shape %r" % (loss.shape,))
    loss.grad = np.ones_like(loss.data)
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)
        for parent in node._parents:
            if parent.requires_grad and parent._backward is None:
                leaves[id(parent)] = parent
    return {leaf: leaf.grad for leaf in leaves.values() if leaf.grad is not None}


@dataclass
class GradCheckReport:
    """Per-input max relative errors of reverse-mode vs finite differences."""

    errors: list[float]
    tol: float
    step: float = 1e-5

    @property
    def max_error(self) -> float:
        return max(self.errors) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors)


def gradcheck(
    f, inputs: Sequence[Tensor], tol: float = 1e-4, step: float = 1e-5
) -> GradCheckReport:
    """Compare gradients of scalar ``f(*inputs)`` against central differences.

    Relative error per element is |a - n| / max(|a|, |n|), falling back to the
    absolute difference when both magnitudes are below 1e-6.
    """
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape():
        out = f(*inputs)
        if out.data.size != 1:
            raise NumericError("gradcheck needs a scalar-valued function")
        backward(out)
    analytic = [
        np.zeros_like(t.data) if t.grad is None else np.array(t.grad, copy=True)
        for t in inputs
    ]
    errors = []
    for t, grad in zip(inputs, analytic):
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(f(*inputs).data)
            flat[i] = orig - step
            lo = float(f(*inputs).data)
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * step)
        scale = np.maximum(np.abs(grad), np.abs(numeric))
        diff = np.abs(grad - numeric)
        rel = np.where(scale > 1e-6, diff / np.where(scale > 1e-6, scale, 1.0), diff)
        errors.append(float(rel.max()) if rel.size else 0.0)
    return GradCheckReport(errors=errors, tol=tol, step=step)
