"""Reverse-mode automatic differentiation over numpy arrays.

Every model in this package is built from the primitives here. Tensors wrap
a numpy array plus an optional gradient and the links needed to replay the
chain rule. Arrays are treated as immutable once wrapped; backward never
mutates a gradient buffer in place, so aliasing between a node's gradient
and a parent's first contribution is harmless.

Training runs in float32, numerical tests in float64. Any NaN or Inf
produced by an operation raises ``NumericsError`` immediately instead of
propagating garbage.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "NumericsError",
    "Tensor",
    "no_grad",
    "constant",
    "matmul",
    "embedding",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "gelu",
    "softmax",
    "log_softmax",
    "layer_norm",
    "dropout",
    "backward",
    "zero_grads",
    "clone_params",
]

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# Additive mask value for attention logits: large enough that exp underflows
# to exactly 0.0 in float32 after max subtraction.
MASK_FILL = -1e9


class NumericsError(ArithmeticError):
    """A forward or backward computation produced NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (pure evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(data: np.ndarray, what: str) -> None:
    # One fused pass: any NaN or Inf in the array leaves the float64 sum
    # non-finite (legitimate magnitudes here never overflow float64).
    if not math.isfinite(float(data.sum(dtype=np.float64))):
        raise NumericsError(f"non-finite values in {what}")


class Tensor:
    """A node of the computation graph: value, gradient, producer links."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        _check_finite(arr, "tensor")
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, constant(np.asarray(-1.0, dtype=self.dtype)))

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(-self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes: Sequence[int]):
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x, dtype=None) -> Tensor:
    """A tensor that never requires gradients (masks, scales, labels)."""
    arr = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x)
    return Tensor(arr)


def _accumulate(parent: Tensor, contrib: np.ndarray) -> None:
    # Never in place: a fresh array per accumulation keeps pass-through
    # gradients (add, reshape) safe to alias.
    if parent.grad is None:
        parent.grad = contrib
    else:
        parent.grad = parent.grad + contrib


def _make(out_data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, what: str) -> Tensor:
    _check_finite(out_data, what)
    out = Tensor(out_data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic primitives ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out, (a, b), backward, "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, (a, b), backward, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accumulate(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out, (a, b), backward, "matmul")


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]

    def backward(g):
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            _scatter_add(buf, idx, g)
            _accumulate(x, buf)

    return _make(out, (x,), backward, "getitem")


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def _scatter_add(buf: np.ndarray, idx, g: np.ndarray) -> None:
    if _is_advanced(idx):
        np.add.at(buf, idx, g)
    else:
        buf[idx] += g  # basic indexing never repeats positions


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather ``weight[ids]`` with additive scatter on the way back."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding ids must be integers")
    out = weight.data[ids]

    def backward(g):
        if weight.requires_grad:
            buf = np.zeros_like(weight.data)
            np.add.at(buf, ids, g)
            _accumulate(weight, buf)

    return _make(out, (weight,), backward, "embedding")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(x.shape))

    return _make(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if x.requires_grad:
            _accumulate(x, np.transpose(g, inverse))

    return _make(out, (x,), backward, "transpose")


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, _spread(g, x.shape, axis, keepdims))

    return _make(out, (x,), backward, "sum")


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size if axis is None else _axis_count(x.shape, axis)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, _spread(g, x.shape, axis, keepdims) / count)

    return _make(out, (x,), backward, "mean")


def _axis_count(shape: tuple[int, ...], axis) -> int:
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    n = 1
    for a in axes:
        n *= shape[a]
    return n


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape).copy()


# -- pointwise nonlinearities ---------------------------------------------


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * out)

    return _make(out, (x,), backward, "exp")


def log(x: Tensor) -> Tensor:
    out = np.log(x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g / x.data)

    return _make(out, (x,), backward, "log")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * (1.0 - out * out))

    return _make(out, (x,), backward, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * out * (1.0 - out))

    return _make(out, (x,), backward, "sigmoid")


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * (x.data > 0))

    return _make(out, (x,), backward, "relu")


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian error linear unit, 0.5 x (1 + erf(x / sqrt(2)))."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def backward(g):
        if x.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
            _accumulate(x, g * (cdf + x.data * pdf))

    return _make(out, (x,), backward, "gelu")


# -- normalizations ---------------------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along ``axis``; outputs sum to 1 along it."""
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"softmax axis {axis} invalid for shape {x.shape}")
    out = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(out, out=out)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * out).sum(axis=axis, keepdims=True)
            _accumulate(x, out * (g - dot))

    return _make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"log_softmax axis {axis} invalid for shape {x.shape}")
    out = x.data - x.data.max(axis=axis, keepdims=True)
    out -= np.log(np.exp(out).sum(axis=axis, keepdims=True))

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then affine.

    ``gain`` and ``bias`` must match the size of the last axis; ``eps``
    guards the variance (population variance, 1/N).
    """
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match last axis {d}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gg = g * gain.data
            m1 = gg.mean(axis=-1, keepdims=True)
            m2 = (gg * xhat).mean(axis=-1, keepdims=True)
            _accumulate(x, (gg - m1 - xhat * m2) * inv_std)

    return _make(out, (x, gain, bias), backward, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers skip this entirely during evaluation."""
    if rate <= 0.0:
        return x
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    keep = (rng.random(x.shape, dtype=draw_dtype) >= rate).astype(x.dtype)
    keep /= np.asarray(1.0 - rate, dtype=x.dtype)
    return mul(x, constant(keep))


# -- backward pass ---------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every reachable tensor that requires gradients.

    ``loss`` must be a scalar. Gradients of fan-out nodes accumulate
    additively; leaves the graph intact (call ``zero_grads`` before reuse).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

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
        for parent in node._parents:
            if id(parent) not in visited and parent.requires_grad:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            g = node.grad
            _check_finite(g, "gradient")
            node._backward(g)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def clone_params(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Snapshot parameter values (used for best-checkpoint bookkeeping)."""
    return {name: p.data.copy() for name, p in params.items()}


def load_param_values(params: dict[str, Tensor], values: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.data = values[name].astype(p.data.dtype, copy=True)
