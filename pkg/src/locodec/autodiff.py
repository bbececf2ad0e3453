"""Minimal reverse-mode automatic differentiation on dense float64 arrays.

Define-by-run: each operation allocates a fresh output node that records its
parent nodes and a backward closure. ``backward`` seeds the scalar loss with
gradient one and walks the recorded graph once in reverse topological order,
accumulating into ``Tensor.grad``. No operation mutates its inputs.

Storage and accumulation are float64 throughout so central finite differences
with h around 1e-5 remain meaningful for gradient verification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


class Tensor:
    """Graph node: a float64 array plus gradient slot and provenance."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "trainable", "name")

    def __init__(self, data, trainable: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.trainable = trainable
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        tag = self.name or "tensor"
        return f"<{tag} shape={self.data.shape} trainable={self.trainable}>"


def parameter(data, name: str) -> Tensor:
    """A trainable leaf. Copies its input so later graph ops cannot alias it."""
    return Tensor(np.array(data, dtype=np.float64), trainable=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    out.parents = tuple(parents)
    out.backward_fn = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} and {b.data.shape}")

    def backward_fn(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def backward_fn(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward_fn(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), backward_fn)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    data = a.data @ b.data

    def backward_fn(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(data, (a, b), backward_fn)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got shape {a.data.shape}")

    def backward_fn(g):
        _accum(a, g.T)

    return _node(a.data.T.copy(), (a,), backward_fn)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward_fn(g):
        _accum(a, g * (1.0 - data * data))

    return _node(data, (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function computed via the tanh identity for stability."""
    data = 0.5 * (np.tanh(0.5 * a.data) + 1.0)

    def backward_fn(g):
        _accum(a, g * data * (1.0 - data))

    return _node(data, (a,), backward_fn)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0

    def backward_fn(g):
        _accum(a, g * mask)

    return _node(a.data * mask, (a,), backward_fn)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Row-stochastic softmax; the row maximum is subtracted before exp."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - dot))

    return _node(data, (a,), backward_fn)


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input list")
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(p, g[tuple(sl)])

    return _node(data, tuple(parts), backward_fn)


def narrow(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis."""
    n = a.data.shape[axis]
    if not (0 <= start < stop <= n):
        raise ShapeError(f"narrow: slice [{start}:{stop}) outside axis of length {n}")
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)

    return _node(a.data[sl].copy(), (a,), backward_fn)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward_fn(g):
        if axis is None:
            _accum(a, np.full_like(a.data, float(g) / count))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _node(data, (a,), backward_fn)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid 1-d convolution over the leading axis.

    x: (T, C_in), w: (K, C_in, C_out), b: (C_out,) -> (T - K + 1, C_out).
    """
    if x.data.ndim != 2 or w.data.ndim != 3 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"conv1d: incompatible shapes {x.data.shape} and {w.data.shape}")
    t, _ = x.data.shape
    k = w.data.shape[0]
    if t < k:
        raise ShapeError(f"conv1d: input length {t} shorter than kernel {k}")
    length = t - k + 1
    data = np.zeros((length, w.data.shape[2]))
    for i in range(k):
        data += x.data[i : i + length] @ w.data[i]
    data = data + b.data

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        for i in range(k):
            gx[i : i + length] += g @ w.data[i].T
            gw[i] = x.data[i : i + length].T @ g
        _accum(x, gx)
        _accum(w, gw)
        _accum(b, g.sum(axis=0))

    return _node(data, (x, w, b), backward_fn)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error, reduced over all elements."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: incompatible shapes {pred.data.shape} and {target.data.shape}")
    diff = pred.data - target.data
    data = np.float64((diff * diff).mean())

    def backward_fn(g):
        gd = (2.0 / diff.size) * float(g) * diff
        _accum(pred, gd)
        _accum(target, -gd)

    return _node(data, (pred, target), backward_fn)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def backward(loss: Tensor, params=()) -> None:
    """Reverse-mode sweep from a scalar loss.

    Populates ``grad`` on every node reachable from ``loss``; any tensor in
    ``params`` that the graph never touched gets an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


@dataclass(frozen=True)
class GradcheckEntry:
    name: str
    n_checked: int
    max_rel_err: float


@dataclass(frozen=True)
class GradcheckReport:
    entries: tuple[GradcheckEntry, ...]
    tolerance: float
    h: float

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def n_checked(self) -> int:
        return sum(e.n_checked for e in self.entries)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tolerance


def gradcheck(
    build_loss,
    params: list[Tensor],
    *,
    n_samples: int = 50,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients against central finite differences.

    ``build_loss`` must be a pure function of the current parameter values
    that rebuilds the scalar loss graph from scratch on every call. Sampled
    entries are drawn without replacement across the concatenated parameter
    space; relative error uses max(|analytic|, |numeric|, 1e-6) as the
    denominator so near-zero gradients do not blow up the ratio.
    """
    loss = build_loss()
    zero_grads(params)
    backward(loss, params)
    analytic = [p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    picks = rng.choice(total, size=min(n_samples, total), replace=False)

    worst = [0.0] * len(params)
    counts = [0] * len(params)
    for flat in sorted(int(v) for v in picks):
        pi = int(np.searchsorted(bounds, flat, side="right")) - 1
        j = flat - bounds[pi]
        p = params[pi]
        orig = p.data.flat[j]
        p.data.flat[j] = orig + h
        f_plus = float(build_loss().data)
        p.data.flat[j] = orig - h
        f_minus = float(build_loss().data)
        p.data.flat[j] = orig
        numeric = (f_plus - f_minus) / (2.0 * h)
        ana = float(analytic[pi].flat[j])
        rel = abs(ana - numeric) / max(abs(ana), abs(numeric), 1e-6)
        worst[pi] = max(worst[pi], rel)
        counts[pi] += 1

    entries = tuple(
        GradcheckEntry(p.name or f"param{i}", counts[i], worst[i])
        for i, p in enumerate(params)
        if counts[i] > 0
    )
    return GradcheckReport(entries=entries, tolerance=tolerance, h=h)
