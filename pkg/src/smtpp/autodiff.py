"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built define-by-run: applying an op to :class:`Tensor` arguments
records a node holding the forward value and a vector-Jacobian closure.
Calling :func:`backward` on a scalar output walks the tape once and
accumulates gradients on every leaf created with ``requires_grad=True``.

Every op also accepts plain numpy arrays and then returns a plain numpy
array, so model code can run traced (training) or untraced (sampling) with
a single implementation.

Design notes:

* float64 everywhere; the arrays in this project are tiny and the exact
  score objective differentiates the score once more in time, which eats
  precision.
* randomness (dropout) is never internal to an op; masks are ordinary
  inputs, so evaluation is a pure function of its arguments.
* every op checks its forward value for non-finite entries and raises
  :class:`GraphError` naming the op, which is the cheapest place to catch
  a diverging optimization.
"""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np


class GraphError(RuntimeError):
    """Non-finite value produced by a graph op."""


class Tensor:
    """A node in the computation tape.

    ``data`` is the cached forward value, ``grad`` the accumulated adjoint
    (populated by :func:`backward`). Leaves carry ``requires_grad=True`` and
    optionally a ``name`` so gradients can be collected per named input.
    """

    __slots__ = ("data", "grad", "name", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, name: str | None = None, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.name = name
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- operator sugar; every overload routes through the module-level ops

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return affine(self, -1.0, 0.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other, float))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


def _is_tensor(*args) -> bool:
    return any(isinstance(a, Tensor) for a in args)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise GraphError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    if not _is_tensor(a, b):
        return np.asarray(a, float) + np.asarray(b, float)
    a, b = _lift(a), _lift(b)
    return _node(a.data + b.data, "add", (a, b), lambda g: (g, g))


def mul(a, b):
    if not _is_tensor(a, b):
        return np.asarray(a, float) * np.asarray(b, float)
    a, b = _lift(a), _lift(b)
    return _node(a.data * b.data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    if not _is_tensor(a, b):
        return np.asarray(a, float) / np.asarray(b, float)
    a, b = _lift(a), _lift(b)
    return _node(a.data / b.data, "div", (a, b),
                 lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def affine(x, scale: float, shift: float = 0.0):
    """Elementwise ``scale * x + shift`` with scalar constants."""
    if not _is_tensor(x):
        return scale * np.asarray(x, float) + shift
    return _node(scale * x.data + shift, "affine", (x,), lambda g: (g * scale,))


def matmul(a, b, transpose_b: bool = False):
    if not _is_tensor(a, b):
        bd = np.asarray(b, float)
        return np.asarray(a, float) @ (bd.T if transpose_b else bd)
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-D operands, got "
                         f"{a.data.shape} and {b.data.shape}")
    bd = b.data.T if transpose_b else b.data
    if a.data.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {bd.shape}")
    out = a.data @ bd

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    def vjp_t(g):
        # out = a @ b.T, so d/da = g @ b and d/db = g.T @ a
        return g @ b.data, g.T @ a.data

    return _node(out, "matmul", (a, b), vjp_t if transpose_b else vjp)


def tanh(x):
    if not _is_tensor(x):
        return np.tanh(np.asarray(x, float))
    t = np.tanh(x.data)
    return _node(t, "tanh", (x,), lambda g: (g * (1.0 - t * t),))


def relu(x):
    """max(0, x); subgradient at 0 is defined as 0."""
    if not _is_tensor(x):
        return np.maximum(np.asarray(x, float), 0.0)
    mask = x.data > 0
    return _node(np.where(mask, x.data, 0.0), "relu", (x,), lambda g: (g * mask,))


def exp(x):
    if not _is_tensor(x):
        return np.exp(np.asarray(x, float))
    e = np.exp(x.data)
    return _node(e, "exp", (x,), lambda g: (g * e,))


def log(x):
    if not _is_tensor(x):
        return np.log(np.asarray(x, float))
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)
    return _node(out, "log", (x,), lambda g: (g / x.data,))


def _softplus_np(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    if not _is_tensor(x):
        return _softplus_np(np.asarray(x, float))
    s = _sigmoid_np(x.data)
    return _node(_softplus_np(x.data), "softplus", (x,), lambda g: (g * s,))


def sigmoid(x):
    if not _is_tensor(x):
        return _sigmoid_np(np.asarray(x, float))
    s = _sigmoid_np(x.data)
    return _node(s, "sigmoid", (x,), lambda g: (g * s * (1.0 - s),))


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x):
    """Row-wise softmax over the last axis."""
    if not _is_tensor(x):
        return _softmax_np(np.asarray(x, float))
    y = _softmax_np(x.data)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return _node(y, "softmax", (x,), vjp)


def log_softmax(x):
    """Row-wise log(softmax(x)), stabilized by a detached row-max shift."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x, float)
    shifted = add(x, -data.max(axis=-1, keepdims=True))
    return add(shifted, mul(log(sum_(exp(shifted), axis=-1, keepdims=True)), -1.0))


def concat(parts: Iterable, axis: int = 0):
    parts = list(parts)
    if not _is_tensor(*parts):
        return np.concatenate([np.asarray(p, float) for p in parts], axis=axis)
    parts = [_lift(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)

    def vjp(g):
        return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))

    return _node(out, "concat", tuple(parts), vjp)


def slice_(x, idx):
    """Basic (non-fancy) indexing; each output element maps to one input."""
    if not _is_tensor(x):
        return np.asarray(x, float)[idx]
    out = x.data[idx]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _node(out, "slice", (x,), vjp)


def take_rows(x, indices):
    """Gather rows (embedding lookup); duplicate indices accumulate grads."""
    indices = np.asarray(indices, dtype=np.intp)
    if not _is_tensor(x):
        return np.asarray(x, float)[indices]
    out = x.data[indices]

    def vjp(g):
        full = np.zeros_like(x.data)
        np.add.at(full, indices, g)
        return (full,)

    return _node(out, "take_rows", (x,), vjp)


def repeat_rows(x, k: int):
    """Repeat each row k times: (n, d) -> (n*k, d)."""
    if not _is_tensor(x):
        return np.repeat(np.asarray(x, float), k, axis=0)
    out = np.repeat(x.data, k, axis=0)
    n = x.data.shape[0]

    def vjp(g):
        return (g.reshape((n, k) + x.data.shape[1:]).sum(axis=1),)

    return _node(out, "repeat_rows", (x,), vjp)


def reshape(x, shape):
    if not _is_tensor(x):
        return np.asarray(x, float).reshape(shape)
    old = x.data.shape
    return _node(x.data.reshape(shape), "reshape", (x,),
                 lambda g: (g.reshape(old),))


def sum_(x, axis=None, keepdims: bool = False):
    if not _is_tensor(x):
        return np.asarray(x, float).sum(axis=axis, keepdims=keepdims)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return _node(out, "sum", (x,), vjp)


def mean(x, axis=None, keepdims: bool = False):
    if not _is_tensor(x):
        return np.asarray(x, float).mean(axis=axis, keepdims=keepdims)
    size = x.data.size if axis is None else x.data.shape[axis]
    return affine(sum_(x, axis=axis, keepdims=keepdims), 1.0 / size)


def masked_fill(x, mask, value: float):
    """Replace entries where ``mask`` is True with ``value`` (a constant)."""
    mask = np.asarray(mask, dtype=bool)
    if not _is_tensor(x):
        return np.where(mask, value, np.asarray(x, float))
    out = np.where(mask, value, x.data)
    return _node(out, "masked_fill", (x,), lambda g: (np.where(mask, 0.0, g),))


# ---------------------------------------------------------------------------
# backward pass


def backward(out: Tensor) -> None:
    """Accumulate gradients of a scalar ``out`` into every reachable leaf."""
    if out.data.size != 1:
        raise ValueError(f"backward requires a scalar output, got shape {out.data.shape}")
    if not out.requires_grad:
        return
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    out.grad = np.ones_like(out.data)
    for node in reversed(topo):
        if node._vjp is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if not parent.requires_grad or g is None:
                continue
            g = _unbroadcast(np.asarray(g, float), parent.data.shape)
            parent.grad = g if parent.grad is None else parent.grad + g


def gradients(out: Tensor, leaves: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward and return one gradient array per named leaf."""
    backward(out)
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in leaves.items()}


def finite_diff_check(fn: Callable[[dict[str, Tensor]], Tensor],
                      params: Mapping[str, np.ndarray],
                      step: float = 1e-5) -> float:
    """Compare analytic gradients of ``fn`` against central differences.

    ``fn`` maps a dict of named leaf tensors to a scalar tensor. Returns the
    max over all coordinates of ``|analytic - numeric| / (|numeric| + 1e-8)``.
    """
    if not (1e-7 <= step <= 1e-3):
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    leaves = {k: Tensor(v, name=k, requires_grad=True) for k, v in base.items()}
    analytic = gradients(fn(leaves), leaves)

    def value_at(values: dict[str, np.ndarray]) -> float:
        out = fn({k: Tensor(v) for k, v in values.items()})
        return float(out.data.reshape(()))

    worst = 0.0
    for name in base:
        work = {k: v.copy() for k, v in base.items()}
        flat = work[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = value_at(work)
            flat[i] = orig - step
            f_minus = value_at(work)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[name].reshape(-1)[i] - numeric) / (abs(numeric) + 1e-8)
            worst = max(worst, err)
    return worst
