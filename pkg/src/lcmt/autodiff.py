"""Minimal tape-based reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records every primitive whose operands include a watched
tensor. Primitives applied only to constants return constants and leave no
trace, so the same forward code serves training (taped) and evaluation.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

Gradients = dict[str, np.ndarray]


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class DimensionError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "tape", "index", "parents", "vjp", "name", "detached")

    def __init__(self, value, tape=None, parents=(), vjp=None, name=None, detached=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.index = -1
        self.parents = tuple(parents)
        self.vjp = vjp
        self.name = name
        self.detached = detached

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_constant(self) -> bool:
        return self.tape is None

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        kind = "const" if self.tape is None else f"node#{self.index}"
        return f"Tensor({kind}, shape={self.shape})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of primitive applications; operands precede outputs."""

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def __len__(self):
        return len(self.nodes)

    def _record(self, t: Tensor) -> Tensor:
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append(t)
        return t

    def watch(self, value, name: str) -> Tensor:
        """Register a trainable leaf under ``name``."""
        if name in self.params:
            raise KeyError(f"parameter {name!r} already watched")
        t = self._record(Tensor(np.array(value, dtype=np.float64), name=name))
        self.params[name] = t
        return t

    def watch_all(self, params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.watch(v, k) for k, v in params.items()}


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def apply(value, parents: Sequence[Tensor], vjp: Callable, detached: bool = False) -> Tensor:
    """Create the output of a primitive.

    ``vjp(g)`` maps the upstream gradient to one gradient per parent (or
    ``None`` to skip a parent). The output is recorded on the first tape found
    among the parents; with no taped parent it is a constant.
    """
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError("primitive produced a non-finite value")
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError("operands live on different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(value)
    return tape._record(Tensor(value, parents=parents, vjp=vjp, detached=detached))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return apply(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    sa, sb = a.shape, b.shape
    return apply(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    av, bv = a.value, b.value
    return apply(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(a, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return apply(a.value * c, (a,), lambda g: (g * c,))


def square(a) -> Tensor:
    a = constant(a)
    av = a.value
    return apply(av * av, (a,), lambda g: (2.0 * av * g,))


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return apply(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(a) -> Tensor:
    a = constant(a)
    mask = a.value > 0
    return apply(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def softmax(logits) -> Tensor:
    logits = constant(logits)
    x = logits.value
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(f"softmax expects b x K with K >= 2, got {x.shape}")
    e = np.exp(x - x.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return apply(s, (logits,), vjp)


def log_softmax(logits) -> Tensor:
    logits = constant(logits)
    x = logits.value
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError(f"log_softmax expects b x K with K >= 2, got {x.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)
    return apply(out, (logits,), lambda g: (g - s * g.sum(axis=1, keepdims=True),))


def pairwise_sq_dist(a, b=None) -> Tensor:
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Uses ``|a|^2 + |b|^2 - 2 a.b`` clamped at zero. When ``b`` is omitted (or
    is ``a`` itself) the result is exactly symmetric with a zero diagonal.
    """
    a = constant(a)
    same = b is None or b is a
    b = a if same else constant(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[1]:
        raise DimensionError(f"pairwise_sq_dist: feature widths differ, {av.shape} vs {bv.shape}")
    na = (av * av).sum(axis=1)
    nb = na if same else (bv * bv).sum(axis=1)
    raw = na[:, None] + nb[None, :] - 2.0 * (av @ bv.T)
    if same:
        raw = 0.5 * (raw + raw.T)
        np.fill_diagonal(raw, 0.0)
    live = raw > 0
    d = np.where(live, raw, 0.0)

    if same:
        def vjp(g):
            s = np.where(live, g, 0.0)
            s = s + s.T
            return (2.0 * (s.sum(axis=1)[:, None] * av - s @ av),)

        return apply(d, (a,), vjp)

    def vjp(g):
        s = np.where(live, g, 0.0)
        ga = 2.0 * (s.sum(axis=1)[:, None] * av - s @ bv)
        gb = 2.0 * (s.sum(axis=0)[:, None] * bv - s.T @ av)
        return ga, gb

    return apply(d, (a, b), vjp)


def normalize_rows(a, floor: float = 1e-12) -> Tensor:
    """Scale each row to unit L2 norm (rows with norm below ``floor`` are divided by ``floor``)."""
    a = constant(a)
    av = a.value
    norm = np.maximum(np.sqrt((av * av).sum(axis=1, keepdims=True)), floor)
    y = av / norm

    def vjp(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return apply(y, (a,), vjp)


def sum_all(a) -> Tensor:
    a = constant(a)
    shape = a.shape
    return apply(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a) -> Tensor:
    a = constant(a)
    return scale(sum_all(a), 1.0 / max(a.value.size, 1))


def rows(a, start: int, stop: int) -> Tensor:
    """Row slice ``a[start:stop]``."""
    a = constant(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return apply(a.value[start:stop], (a,), vjp)


def pick(a, cols) -> Tensor:
    """Gather ``a[i, cols[i]]`` for each row i."""
    a = constant(a)
    cols = np.asarray(cols, dtype=np.int64)
    idx = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[idx, cols] = g
        return (out,)

    return apply(a.value[idx, cols], (a,), vjp)


def detach(a) -> Tensor:
    """Identity in value; blocks gradient flow to ``a``."""
    a = constant(a)
    return apply(a.value.copy(), (a,), None, detached=True)


def backward(loss: Tensor, tape: Tape | None = None) -> Gradients:
    """Reverse accumulation from a scalar ``loss``.

    Returns one gradient per watched parameter reachable from the loss; a
    parameter reachable only through a detached node gets zeros.
    """
    if loss.value.size != 1 or loss.value.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = tape if tape is not None else loss.tape
    if tape is None or loss.tape is not tape:
        raise ValueError("loss is not on the given tape")

    reach = np.zeros(len(tape.nodes), dtype=bool)
    reach[loss.index] = True
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.index] = np.ones(())
    for i in range(loss.index, -1, -1):
        if not reach[i]:
            continue
        node = tape.nodes[i]
        for p in node.parents:
            if p.tape is tape:
                reach[p.index] = True
        g = grads[i]
        if g is None or node.detached or node.vjp is None:
            continue
        for p, pg in zip(node.parents, node.vjp(g)):
            if p.tape is not tape or pg is None:
                continue
            grads[p.index] = pg if grads[p.index] is None else grads[p.index] + pg

    out: Gradients = {}
    for name, t in tape.params.items():
        if reach[t.index]:
            g = grads[t.index]
            out[name] = np.zeros(t.shape) if g is None else np.asarray(g, dtype=np.float64).reshape(t.shape)
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Largest relative error between the taped gradient of ``f`` and central differences.

    The per-coordinate denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.array(point, dtype=np.float64)
    tape = Tape()
    analytic = backward(f(tape.watch(x0, "x")), tape).get("x", np.zeros_like(x0))
    numeric = np.empty_like(x0)
    flat = numeric.reshape(-1)
    for k in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp.flat[k] += step
        xm.flat[k] -= step
        flat[k] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0
