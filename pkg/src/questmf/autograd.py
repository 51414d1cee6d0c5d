"""Reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every primitive applied to a tensor that requires a
gradient while the tape is active. :func:`reverse_sweep` walks the record
backwards once and returns gradients for the trainable leaves.

    >>> p = parameter([1.0, 2.0, 3.0])
    >>> with Tape() as tape:
    ...     loss = ops.sum(p * p)
    >>> reverse_sweep(tape, loss, [p])[p]
    array([2., 4., 6.])
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "reverse_sweep",
    "grad_check",
    "record",
]

_ACTIVE: list["Tape"] = []


class Tensor:
    """Immutable float64 array plus a flag marking it as differentiable."""

    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return _ops().add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)


def _ops():
    from . import ops

    return ops


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    if isinstance(data, Tensor):
        return data
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    """A trainable leaf. The array is copied so callers cannot alias it."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


class Tape:
    """Ordered record of primitive applications.

    Entries are ``(output, inputs, backward)`` where ``backward`` maps the
    output gradient to a tuple of input gradients (``None`` for inputs that
    need none). Entries are appended as operations run, so inputs always
    precede the operations that consume them.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._index: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def append(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self._index[id(out)] = len(self.records)
        self.records.append((out, inputs, backward))

    def gradient(self, loss: Tensor, params: Sequence[Tensor] | None = None):
        return reverse_sweep(self, loss, params)


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def record(data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Wrap ``data`` as an op output, recording it when any input needs grad."""
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.append(out, inputs, backward)
        return out
    return Tensor(data)


def _accumulate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape == b.shape:
        return a + b
    # one of them covers only the leading rows
    if a.shape[0] < b.shape[0]:
        a, b = b, a
    out = a.copy()
    out[: b.shape[0]] += b
    return out


def _expand(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    out = np.zeros(shape)
    out[: g.shape[0]] = g
    return out


def reverse_sweep(
    tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None, compact: bool = False
) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to trainable leaves.

    With ``params`` given, every listed tensor gets an entry; those that did
    not participate get zeros. Otherwise all participating leaves are returned.

    A few primitives (``ops.matmul_prefix``) only touch the leading rows of a
    weight. By default their gradients are widened to full shape; with
    ``compact=True`` they are returned as leading-row blocks, the remaining
    rows being zero, which :class:`~questmf.optim.AdamW` accepts directly.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    end = tape._index.get(id(loss))
    if end is None or tape.records[end][0] is not loss:
        raise ValueError("loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for i in range(end, -1, -1):
        out, inputs, backward = tape.records[i]
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, backward(g)):
            if gi is None or not t.requires_grad:
                continue
            k = id(t)
            if k not in tape._index:
                leaves[k] = t
            prev = grads.get(k)
            grads[k] = gi if prev is None else _accumulate(prev, gi)

    fit = (lambda g, t: g) if compact else (lambda g, t: _expand(g, t.shape))
    if params is None:
        return {t: fit(grads[k], t) for k, t in leaves.items()}
    return {
        p: (fit(grads[id(p)], p) if id(p) in grads else np.zeros_like(p.data)) for p in params
    }


def grad_check(
    forward: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error at each coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    ``max_coords`` limits the number of probed coordinates per parameter
    (sampled with ``rng``); by default every coordinate is checked.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    with Tape() as tape:
        loss = forward(params)
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("forward produced a non-finite value")
    analytic = reverse_sweep(tape, loss, params)

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        if not np.shares_memory(flat, p.data):
            raise ValueError("parameter data must be contiguous")
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        ga = analytic[p].reshape(-1)
        for k in coords:
            orig = flat[k]
            flat[k] = orig + eps
            fp = forward(params).item()
            flat[k] = orig - eps
            fm = forward(params).item()
            flat[k] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("forward produced a non-finite value")
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(ga[k] - num) / max(1.0, abs(num)))
    return worst
