"""Dense tensors with tape-based reverse-mode differentiation.

Every op works on whole float64 arrays of rank 1 to 3 and records a
closure that maps the output gradient to one gradient per parent.
``Tensor.backward`` replays those closures in reverse topological order.

Broadcasting is limited to adding a 1-D bias along the last axis;
everything else requires identical shapes so shape rules stay checkable.
"""
from __future__ import annotations

import contextlib
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import EvaluationError, ShapeError

MAX_RANK = 3

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run forward ops without recording the graph (thread-local)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > MAX_RANK:
            raise ShapeError(f"rank {arr.ndim} exceeds the maximum of {MAX_RANK}")
        if 0 in arr.shape:
            raise ShapeError(f"empty dimension in shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients of this tensor into every reachable leaf."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a seed needs a single-element tensor")
            grad = np.ones_like(self.data)
        grads: dict[int, object] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(_topo_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    _add_into(node.grad, g)
                continue
            if isinstance(g, RowScatter):
                g = g.dense()
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else _accumulate(grads[key], pg)

    # operator sugar; the named functions below are the real API
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class RowScatter:
    """Gradient that is zero except for (possibly repeated) rows ``idx``.

    Row gathers from a large table emit this instead of a dense array, so
    per-sample gradients of an embedding table stay cheap until they reach
    the leaf.
    """

    __slots__ = ("idx", "values", "shape")

    def __init__(self, idx: np.ndarray, values: np.ndarray, shape: tuple[int, ...]):
        self.idx = idx
        self.values = values
        self.shape = shape

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, self.idx, self.values)
        return out


def _accumulate(a, b):
    if isinstance(a, RowScatter) and isinstance(b, RowScatter):
        return RowScatter(np.concatenate([a.idx, b.idx]),
                          np.concatenate([a.values, b.values]), a.shape)
    if isinstance(a, RowScatter):
        a, b = b, a
    if isinstance(b, RowScatter):
        out = a.copy()
        np.add.at(out, b.idx, b.values)
        return out
    return a + b


def _add_into(target: np.ndarray, g) -> None:
    if isinstance(g, RowScatter):
        np.add.at(target, g.idx, g.values)
    else:
        target += g


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _swap_last(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# elementwise and linear ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of rank-2 operands, or batched over a shared leading axis."""
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ShapeError(f"matmul needs two rank-2 or two rank-3 tensors, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ _swap_last(bd), _swap_last(ad) @ g

    return _node(ad @ bd, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may also be a 1-D bias added along the last axis."""
    if a.shape == b.shape:
        return _node(a.data + b.data, (a, b), lambda g: (g, g))
    if b.ndim == 1 and a.ndim > 1 and b.shape[0] == a.shape[-1]:
        lead = tuple(range(a.ndim - 1))
        return _node(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=lead)))
    raise ShapeError(f"add shape mismatch: {a.shape} + {b.shape}")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} - {b.shape}")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shape mismatch: {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def smul(s: Tensor, a: Tensor) -> Tensor:
    """Multiply every element of ``a`` by the single-element tensor ``s``."""
    if s.data.size != 1:
        raise ShapeError(f"smul needs a single-element scale, got {s.shape}")
    sv = s.data.reshape(-1)[0]
    ad = a.data

    def backward(g):
        return np.array([np.sum(g * ad)]).reshape(s.shape), g * sv

    return _node(sv * ad, (s, a), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: (g * c,))


def rsub(c: float, a: Tensor) -> Tensor:
    """Return ``c - a``."""
    return _node(c - a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _node(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _node(np.log(x), (a,), lambda g: (g / x,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # two-branch form: saturates to exactly 0.0 / 1.0 instead of overflowing
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return _node(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _node(np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),))


# ---------------------------------------------------------------------------
# shape ops


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        if a.ndim < 2:
            raise ShapeError("transpose needs rank >= 2")
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(str(exc)) from None
    return _node(out, (a,), lambda g: (g.reshape(old),))


def take_rows(a: Tensor, index: Sequence[int]) -> Tensor:
    """Gather rows of a rank-2 tensor (embedding lookup)."""
    if a.ndim != 2:
        raise ShapeError(f"take_rows needs a rank-2 tensor, got {a.shape}")
    idx = np.asarray(index, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeError("take_rows needs a non-empty 1-D index")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"row index out of range for {a.shape[0]} rows")
    shape = a.shape
    return _node(a.data[idx], (a,), lambda g: (RowScatter(idx, g, shape),))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack rank-2 tensors with equal column counts vertically."""
    parts = list(parts)
    if not parts or any(p.ndim != 2 for p in parts):
        raise ShapeError("concat_rows needs one or more rank-2 tensors")
    ncol = parts[0].shape[1]
    if any(p.shape[1] != ncol for p in parts):
        raise ShapeError("concat_rows column count mismatch")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def diagonal(a: Tensor) -> Tensor:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"diagonal needs a square matrix, got {a.shape}")
    n = a.shape[0]

    def backward(g):
        out = np.zeros((n, n))
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return _node(np.diagonal(a.data).copy(), (a,), backward)


# ---------------------------------------------------------------------------
# row-wise reductions and normalizations (all along the last axis)


def softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    y = z / z.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

    return _node(y, (a,), backward)


def logsumexp_rows(a: Tensor) -> Tensor:
    """log(sum(exp(x))) over the last axis, max-shifted."""
    if a.ndim < 2:
        raise ShapeError("logsumexp_rows needs rank >= 2")
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    z = np.exp(x - m)
    s = z.sum(axis=-1, keepdims=True)
    out = (m + np.log(s))[..., 0]
    p = z / s
    return _node(out, (a,), lambda g: (p * g[..., None],))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    n = x.shape[-1]
    if gain.shape != (n,) or shift.shape != (n,):
        raise ShapeError(f"layer_norm parameters must have shape ({n},)")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    lead = tuple(range(x.ndim - 1))

    def backward(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _node(xhat * gd + shift.data, (x, gain, shift), backward)


def l2_normalize(a: Tensor) -> Tensor:
    """Scale each row to unit Euclidean norm. Zero rows are an error."""
    x = a.data
    norm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    if not np.all(norm > 0) or not np.all(np.isfinite(norm)):
        raise EvaluationError("cannot normalize a zero or non-finite vector")
    y = x / norm

    def backward(g):
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return _node(y, (a,), backward)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d_head)) V, over rank-2 or head-batched rank-3 inputs."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key head dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    scores = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    return matmul(softmax_rows(scores), v)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    """Largest relative error per checked tensor."""

    errors: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def grad_check(
    fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its result from the current contents of ``params``
    on every call. Each parameter is perturbed in place and restored.
    Error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    out = fn()
    if out.data.size != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    if not np.all(np.isfinite(out.data)):
        raise EvaluationError("function value is not finite")
    out.backward()

    def value() -> float:
        with no_grad():
            v = fn().item()
        if not math.isfinite(v):
            raise EvaluationError("function value is not finite under perturbation")
        return v

    report = GradCheckReport(tol=tol)
    for i, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        worst = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            up = value()
            flat[j] = orig - eps
            down = value()
            flat[j] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic.reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a), abs(numeric)))
        report.errors[p.name or f"param{i}"] = worst
    return report
