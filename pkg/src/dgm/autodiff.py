"""Reverse-mode automatic differentiation over numpy arrays.

The engine covers exactly the primitive set needed by the losses in this
package: elementwise arithmetic with broadcasting, matrix products, slicing
and stacking, exp/log/sqrt, sigmoid and softplus, trigonometric functions,
plus Cholesky factorization and triangular solves for the Gaussian-process
terms.  Everything is computed in 64-bit floats.

Usage pattern: parameters live in a flat :class:`ParamVector` with a named
segment layout.  A loss is a callable taking a ``{segment name -> Tensor}``
mapping and returning a scalar ``Tensor``; :func:`value_and_grad` traces it
once and back-propagates, :func:`finite_diff_check` verifies the gradient
against central differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg
from scipy.special import expit

logger = logging.getLogger(__name__)

__all__ = [
    "Tensor",
    "ParamVector",
    "Segment",
    "GradResult",
    "ConditioningError",
    "NonFiniteLossError",
    "constant",
    "flatten_params",
    "unflatten_params",
    "value_and_grad",
    "finite_diff_check",
    "exp",
    "log",
    "sqrt",
    "sigmoid",
    "softplus",
    "sin",
    "cos",
    "tan",
    "clip_min",
    "matmul",
    "expand_dims",
    "concatenate",
    "stack",
    "diag_part",
    "cholesky",
    "solve_triangular",
]


class ConditioningError(RuntimeError):
    """A positive-definite factorization failed even after jitter escalation."""


class NonFiniteLossError(RuntimeError):
    """The traced loss evaluated to NaN or infinity."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph wrapping a float64 numpy array."""

    __slots__ = ("value", "parents", "vjp", "requires_grad", "grad")

    def __init__(self, value, requires_grad: bool = False, parents=(), vjp=None):
        self.value = _as_array(value)
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    # -- operators -------------------------------------------------------
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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, vjp) -> Tensor:
    tracked = tuple(p for p in parents if p.requires_grad)
    if not tracked:
        return Tensor(value)
    return Tensor(value, requires_grad=True, parents=parents, vjp=vjp)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.value, a.shape),
            _unbroadcast(g * a.value, b.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _node(
        a.value / b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = _lift(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = _lift(a)
    e = float(exponent)
    return _node(
        a.value**e,
        (a,),
        lambda g: (g * e * a.value ** (e - 1.0),),
    )


# ---------------------------------------------------------------------------
# unary functions
# ---------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _lift(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * (0.5 / out),))


def sigmoid(a) -> Tensor:
    a = _lift(a)
    out = expit(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed stably."""
    a = _lift(a)
    out = np.logaddexp(0.0, a.value)
    return _node(out, (a,), lambda g: (g * expit(a.value),))


def sin(a) -> Tensor:
    a = _lift(a)
    return _node(np.sin(a.value), (a,), lambda g: (g * np.cos(a.value),))


def cos(a) -> Tensor:
    a = _lift(a)
    return _node(np.cos(a.value), (a,), lambda g: (-g * np.sin(a.value),))


def tan(a) -> Tensor:
    a = _lift(a)
    c = np.cos(a.value)
    return _node(np.tan(a.value), (a,), lambda g: (g / (c * c),))


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo) with zero gradient on the clipped region."""
    a = _lift(a)
    mask = a.value > lo
    return _node(np.maximum(a.value, lo), (a,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def transpose(a) -> Tensor:
    a = _lift(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def expand_dims(a, axis: int) -> Tensor:
    a = _lift(a)
    return _node(
        np.expand_dims(a.value, axis),
        (a,),
        lambda g: (np.squeeze(g, axis=axis),),
    )


def take(a, key) -> Tensor:
    a = _lift(a)

    def vjp(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        return (full,)

    return _node(a.value[key], (a,), vjp)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            for i in sorted(a_mod % a.value.ndim for a_mod in ax):
                g = np.expand_dims(g, i)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), vjp)


def concatenate(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [_lift(p) for p in parts]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(parts)))

    return _node(np.stack([p.value for p in parts], axis=axis), tuple(parts), vjp)


def diag_part(a) -> Tensor:
    a = _lift(a)
    n = a.shape[0]

    def vjp(g):
        full = np.zeros_like(a.value)
        np.fill_diagonal(full, g)
        return (full,)

    return _node(np.diagonal(a.value).copy(), (a,), vjp)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for 2-D @ 2-D and 2-D @ 1-D operands."""
    a, b = _lift(a), _lift(b)
    if a.ndim == 2 and b.ndim == 2:
        def vjp(g):
            return (g @ b.value.T, a.value.T @ g)
    elif a.ndim == 2 and b.ndim == 1:
        def vjp(g):
            return (np.outer(g, b.value), a.value.T @ g)
    elif a.ndim == 1 and b.ndim == 2:
        def vjp(g):
            return (g @ b.value.T, np.outer(a.value, g))
    else:
        raise ValueError(f"unsupported matmul ranks: {a.ndim} @ {b.ndim}")
    return _node(a.value @ b.value, (a, b), vjp)


_EXTRA_JITTERS = (1e-7, 1e-6, 1e-5, 1e-4)


def cholesky(a) -> Tensor:
    """Lower Cholesky factor of an SPD matrix.

    On factorization failure the diagonal is jittered with an escalating
    sequence up to 1e-4 (each attempt logged); beyond that a
    :class:`ConditioningError` is raised.  The returned factor (and hence all
    gradients) corresponds to the jittered matrix.
    """
    a = _lift(a)
    value = a.value
    try:
        lower = np.linalg.cholesky(value)
    except np.linalg.LinAlgError:
        lower = None
        eye = np.eye(value.shape[0])
        for jitter in _EXTRA_JITTERS:
            logger.warning("Cholesky failed; retrying with jitter %.0e", jitter)
            try:
                lower = np.linalg.cholesky(value + jitter * eye)
                break
            except np.linalg.LinAlgError:
                continue
        if lower is None:
            raise ConditioningError(
                "Cholesky factorization failed after jitter escalation to 1e-4"
            )

    def vjp(g):
        # Murray (2016): middle = tril(L^T g) with halved diagonal, then
        # abar = L^{-T} middle L^{-1}, symmetrized.
        middle = np.tril(lower.T @ g)
        np.fill_diagonal(middle, 0.5 * np.diagonal(middle))
        tmp = scipy.linalg.solve_triangular(
            lower, middle, lower=True, trans="T", check_finite=False
        )
        abar = scipy.linalg.solve_triangular(
            lower, tmp.T, lower=True, trans="T", check_finite=False
        ).T
        return (0.5 * (abar + abar.T),)

    return _node(lower, (a,), vjp)


def solve_triangular(lower, b, trans: str = "N") -> Tensor:
    """Solve L x = b (trans="N") or L^T x = b (trans="T"), L lower triangular."""
    lower, b = _lift(lower), _lift(b)
    lo = lower.value
    x = scipy.linalg.solve_triangular(lo, b.value, lower=True, trans=trans, check_finite=False)
    other = "T" if trans == "N" else "N"

    def vjp(g):
        gb = scipy.linalg.solve_triangular(lo, g, lower=True, trans=other, check_finite=False)
        left, right = (gb, x) if trans == "N" else (x, gb)
        gl = -np.outer(left, right) if x.ndim == 1 else -(left @ right.T)
        return (np.tril(gl), gb)

    return _node(x, (lower, b), vjp)


def dot(a, b) -> Tensor:
    """Inner product of two vectors."""
    return reduce_sum(mul(a, b))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(root: Tensor) -> None:
    """Accumulate gradients of a scalar `root` into the graph's leaves."""
    if root.value.ndim != 0:
        raise ValueError("backward() requires a scalar output")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_nodes = [root]
    while stack_nodes:
        node = stack_nodes[-1]
        if id(node) in seen:
            stack_nodes.pop()
            continue
        pending = [p for p in node.parents if p.requires_grad and id(p) not in seen]
        if pending:
            stack_nodes.extend(pending)
            continue
        seen.add(id(node))
        order.append(node)
        stack_nodes.pop()

    root.grad = np.ones(())
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        grads = node.vjp(node.grad)
        for parent, g in zip(node.parents, grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g
        node.grad = None  # free intermediate gradients eagerly


# ---------------------------------------------------------------------------
# flat parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    shape: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


@dataclass
class ParamVector:
    """A flat float64 vector with a named, ordered segment layout."""

    values: np.ndarray
    segments: tuple

    def __post_init__(self):
        self.values = _as_array(self.values).ravel()
        end = 0
        for seg in self.segments:
            if seg.offset != end:
                raise ValueError(f"segment {seg.name!r} not contiguous at offset {end}")
            end += seg.size
        if end != self.values.size:
            raise ValueError("segments do not cover the parameter vector")

    def __len__(self) -> int:
        return self.values.size

    @property
    def names(self) -> tuple:
        return tuple(seg.name for seg in self.segments)

    def get(self, name: str) -> np.ndarray:
        for seg in self.segments:
            if seg.name == name:
                return self.values[seg.offset : seg.offset + seg.size].reshape(seg.shape)
        raise KeyError(name)

    def replace_values(self, values: np.ndarray) -> "ParamVector":
        if values.size != self.values.size:
            raise ValueError("length mismatch")
        return ParamVector(values.copy(), self.segments)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments)


def flatten_params(named: Mapping[str, np.ndarray]) -> ParamVector:
    """Concatenate named arrays into a ParamVector, preserving insertion order."""
    segments = []
    chunks = []
    offset = 0
    for name, arr in named.items():
        arr = _as_array(arr)
        segments.append(Segment(name, offset, arr.shape))
        chunks.append(arr.ravel())
        offset += arr.size
    values = np.concatenate(chunks) if chunks else np.zeros(0)
    return ParamVector(values, tuple(segments))


def unflatten_params(p: ParamVector) -> dict:
    return {seg.name: p.get(seg.name).copy() for seg in p.segments}


@dataclass
class GradResult:
    value: float
    gradient: np.ndarray


def _leaf_dict(p: ParamVector, requires_grad: bool) -> dict:
    return {
        seg.name: Tensor(
            p.values[seg.offset : seg.offset + seg.size].reshape(seg.shape),
            requires_grad=requires_grad,
        )
        for seg in p.segments
    }


def value_and_grad(loss: Callable[[Mapping[str, Tensor]], Tensor], p: ParamVector) -> GradResult:
    """Trace `loss` at `p` and return its value and exact gradient.

    Raises :class:`NonFiniteLossError` if the loss value is NaN or infinite;
    parameters the loss never touches get an exactly-zero gradient.
    """
    leaves = _leaf_dict(p, requires_grad=True)
    out = loss(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("loss must return a Tensor")
    value = float(out.value)
    if not math.isfinite(value):
        raise NonFiniteLossError(f"loss evaluated to {value!r}")
    backward(out)
    grad = np.zeros(len(p))
    for seg in p.segments:
        leaf = leaves[seg.name]
        if leaf.grad is not None:
            grad[seg.offset : seg.offset + seg.size] = leaf.grad.ravel()
    if not np.all(np.isfinite(grad)):
        raise NonFiniteLossError("gradient contains non-finite entries")
    return GradResult(value, grad)


def evaluate(loss: Callable[[Mapping[str, Tensor]], Tensor], p: ParamVector) -> float:
    """Evaluate `loss` at `p` without building a differentiable graph."""
    return float(loss(_leaf_dict(p, requires_grad=False)).value)


def finite_diff_check(
    loss: Callable[[Mapping[str, Tensor]], Tensor],
    p: ParamVector,
    eps: float = 1e-6,
) -> float:
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|), central differences."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g_ad = value_and_grad(loss, p).gradient
    g_fd = np.zeros_like(g_ad)
    base = p.values
    for i in range(base.size):
        bumped = base.copy()
        bumped[i] = base[i] + eps
        hi = evaluate(loss, p.replace_values(bumped))
        bumped[i] = base[i] - eps
        lo = evaluate(loss, p.replace_values(bumped))
        g_fd[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(1.0, np.abs(g_ad))
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if base.size else 0.0
