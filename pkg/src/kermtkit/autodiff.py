"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Operations record themselves on the active :class:`Tape` (one per thread)::

    with Tape() as tape:
        y = relu(add_row(matmul(x, w), b))
        loss = sum(y)
    grads = backward(tape, loss)
    grads[w]

Gradients are returned from :func:`backward` instead of being stored on the
tensors, so leaf tensors can be shared between threads that each run their
own tape.
"""

from __future__ import annotations

import builtins
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import IndexOutOfRange, NonScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, as_tensor(other))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Record:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Ordered record of differentiable operations."""

    _local = threading.local()

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self):
        stack = getattr(Tape._local, "stack", None)
        if stack is None:
            stack = Tape._local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._local.stack.pop()
        return False

    @staticmethod
    def current() -> "Tape | None":
        stack = getattr(Tape._local, "stack", None)
        return stack[-1] if stack else None


def _emit(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = Tape.current()
    if needs and tape is not None:
        tape.records.append(_Record(out, tuple(inputs), backward))
    return out


class Gradients:
    """Mapping from tensors to their gradients (zeros when unreachable)."""

    def __init__(self, grads: dict[int, np.ndarray], tensors: dict[int, Tensor]):
        self._grads = grads
        self._tensors = tensors

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        return np.zeros_like(t.data) if g is None else g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def for_params(self, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
        return {name: self[t] for name, t in params.items()}


def backward(tape: Tape, loss: Tensor) -> Gradients:
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for rec in reversed(tape.records):
        g_out = grads.get(id(rec.output))
        if g_out is None:
            continue
        if rec.output is not loss:
            del grads[id(rec.output)]
        for t, g in zip(rec.inputs, rec.backward(g_out)):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                tensors[key] = t
    return Gradients(grads, tensors)


# -- operations -----------------------------------------------------------


def _check(cond: bool, msg: str):
    if not cond:
        raise ShapeMismatch(msg)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.ndim == 2 and b.ndim == 2 and a.shape[1] == b.shape[0], f"matmul {a.shape} @ {b.shape}")
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"add {a.shape} + {b.shape}")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"sub {a.shape} - {b.shape}")
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def add_row(x: Tensor, bias: Tensor) -> Tensor:
    """Add a row vector ``bias`` [d] to every row of ``x`` [n, d]."""
    _check(x.ndim == 2 and bias.ndim == 1 and x.shape[1] == bias.shape[0], f"add_row {x.shape} + {bias.shape}")
    return _emit(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=0)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, f"mul {a.shape} * {b.shape}")
    A, B = a.data, b.data
    return _emit(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _emit(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax_rows(x: Tensor) -> Tensor:
    _check(x.ndim == 2, "softmax_rows expects a matrix")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    return _emit(y, (x,), lambda g: (y * (g - (g * y).sum(axis=1, keepdims=True)),))


def log_softmax_rows(x: Tensor) -> Tensor:
    _check(x.ndim == 2, "log_softmax_rows expects a matrix")
    y = _log_softmax(x.data)
    p = np.exp(y)
    return _emit(y, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))


def layer_norm_rows(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean and unit variance (no learned gain or shift)."""
    _check(x.ndim == 2, "layer_norm_rows expects a matrix")
    n = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=1, keepdims=True) + eps)
    y = (x.data - mu) * inv

    def grad(g):
        gs = g.sum(axis=1, keepdims=True)
        gy = (g * y).sum(axis=1, keepdims=True)
        return (inv * (g - gs / n - y * gy / n),)

    return _emit(y, (x,), grad)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = x.shape
    if axis is None:
        return _emit(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    return _emit(x.data.sum(axis=axis), (x,), lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def _check_index(index: np.ndarray, n: int):
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexOutOfRange(f"row index out of range for {n} rows")


def gather_rows(x: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    _check_index(index, x.shape[0])
    n = x.shape[0]
    return _emit(x.data[index], (x,), lambda g: (kernels.scatter_add_rows(g, index, n),))


def scatter_add_rows(x: Tensor, index, n_out: int) -> Tensor:
    """``out[index[i]] += x[i]``; the adjoint of :func:`gather_rows`."""
    index = np.asarray(index, dtype=np.int64)
    _check(index.shape[0] == x.shape[0], f"scatter index length {index.shape[0]} != rows {x.shape[0]}")
    _check_index(index, n_out)
    return _emit(kernels.scatter_add_rows(x.data, index, n_out), (x,), lambda g: (g[index],))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    _check(len({t.shape[:axis] + t.shape[axis + 1 :] for t in tensors}) == 1, "concat shape mismatch")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, sizes, axis=axis)),
    )


def segment_attention(q: Tensor, k: Tensor, v: Tensor, offsets, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention restricted to row segments.

    Rows ``offsets[s]:offsets[s+1]`` only attend to each other, so each
    segment's output is independent of every other segment.
    """
    _check(q.shape == k.shape == v.shape and q.ndim == 2, "attention q/k/v shape mismatch")
    n, d = q.shape
    _check(d % heads == 0, f"hidden {d} not divisible by {heads} heads")
    dh = d // heads
    factor = 1.0 / np.sqrt(dh)
    offsets = np.asarray(offsets, dtype=np.int64)
    Q = q.data.reshape(n, heads, dh)
    K = k.data.reshape(n, heads, dh)
    V = v.data.reshape(n, heads, dh)
    out = np.empty_like(Q)
    probs = []
    for s in range(len(offsets) - 1):
        a, b = offsets[s], offsets[s + 1]
        scores = np.einsum("ihd,jhd->hij", Q[a:b], K[a:b]) * factor
        scores -= scores.max(axis=2, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=2, keepdims=True)
        probs.append(p)
        out[a:b] = np.einsum("hij,jhd->ihd", p, V[a:b])

    def grad(g):
        G = g.reshape(n, heads, dh)
        dQ, dK, dV = np.empty_like(Q), np.empty_like(K), np.empty_like(V)
        for s in range(len(offsets) - 1):
            a, b = offsets[s], offsets[s + 1]
            p = probs[s]
            dV[a:b] = np.einsum("hij,ihd->jhd", p, G[a:b])
            dp = np.einsum("ihd,jhd->hij", G[a:b], V[a:b])
            ds = p * (dp - (dp * p).sum(axis=2, keepdims=True)) * factor
            dQ[a:b] = np.einsum("hij,jhd->ihd", ds, K[a:b])
            dK[a:b] = np.einsum("hij,ihd->jhd", ds, Q[a:b])
        return dQ.reshape(n, d), dK.reshape(n, d), dV.reshape(n, d)

    return _emit(out.reshape(n, d), (q, k, v), grad)


# -- fused losses -----------------------------------------------------------


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def _log_softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_sum(logits: Tensor, targets) -> Tensor:
    """Sum over rows of ``-log softmax(logits)[row, target]``."""
    targets = np.asarray(targets, dtype=np.int64)
    _check(logits.ndim == 2 and targets.shape == (logits.shape[0],), "cross entropy shape mismatch")
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise IndexOutOfRange("class id outside logits width")
    logp = _log_softmax(logits.data)
    rows = np.arange(len(targets))
    value = -logp[rows, targets].sum()

    def grad(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (d * g,)

    return _emit(np.array(value), (logits,), grad)


def bce_with_logits_sum(logits: Tensor, targets) -> Tensor:
    """Summed binary cross-entropy on raw logits."""
    y = np.asarray(targets, dtype=np.float64)
    _check(y.shape == logits.shape, "bce shape mismatch")
    x = logits.data
    value = (np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))).sum()
    return _emit(np.array(value), (logits,), lambda g: ((_sigmoid(x) - y) * g,))


def masked_sse(pred: Tensor, target, mask) -> Tensor:
    """Sum of squared errors over entries where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool)
    t = np.where(mask, np.asarray(target, dtype=np.float64), 0.0)
    _check(pred.shape == mask.shape == t.shape, "masked_sse shape mismatch")
    r = np.where(mask, pred.data - t, 0.0)
    return _emit(np.array((r * r).sum()), (pred,), lambda g: (2.0 * r * g,))


# -- verification -----------------------------------------------------------


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5, max_entries: int | None = None, seed: int = 0) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` builds the scalar loss from ``params`` (read through ``.data``).
    relative error = |g - g_fd| / max(1e-8, |g| + |g_fd|).
    With ``max_entries`` only a seeded random subset of entries per tensor is probed.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    with Tape() as tape:
        loss = f()
    grads = backward(tape, loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        g = grads[p]
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            ad = g.reshape(-1)[i]
            err = abs(ad - fd) / builtins.max(1e-8, abs(ad) + abs(fd))
            worst = builtins.max(worst, err)
    return worst
