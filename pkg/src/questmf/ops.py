"""Differentiable primitives.

Every function accepts :class:`Tensor` objects (numbers and arrays are
wrapped as constants) and returns a new tensor. Backward closures return one
gradient per input, already reduced to that input's shape.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .autograd import Tensor, record, tensor

__all__ = [
    "add", "sub", "mul", "div", "neg", "matmul", "matmul_prefix", "take_rows", "scatter_rows", "sum", "mean", "reshape",
    "transpose", "concat", "pad_axis", "relu", "tanh", "sigmoid", "exp", "log", "softmax",
    "where", "clamp_min", "lstm_recurrence",
]


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return record(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return record(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return record(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = (
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            if b.requires_grad
            else None
        )
        return ga, gb

    return record(a.data / b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = _t(a)
    return record(-a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batching rules; both operands at least 2-D."""
    a, b = _t(a), _t(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul width mismatch: {a.shape} @ {b.shape}")

    if b.ndim == 2:
        # fold leading axes into one GEMM
        k, n = b.shape
        ad = np.ascontiguousarray(a.data).reshape(-1, k)
        bd = b.data

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ bd.T).reshape(a.shape) if a.requires_grad else None
            gb = ad.T @ g2 if b.requires_grad else None
            return ga, gb

        return record((ad @ bd).reshape(a.shape[:-1] + (n,)), (a, b), backward)

    # stacked products only reach BLAS with contiguous operands
    ad = np.ascontiguousarray(a.data)
    bd = np.ascontiguousarray(b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.ascontiguousarray(np.swapaxes(bd, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.ascontiguousarray(np.swapaxes(ad, -1, -2)) @ g, b.shape)
        return ga, gb

    return record(ad @ bd, (a, b), backward)


def matmul_prefix(a, b) -> Tensor:
    """``a @ b[:k]`` for 2-D ``a`` of width k <= rows of ``b``.

    Equals the product of ``a`` zero-padded to the full width with ``b``. The
    gradient for ``b`` is the (k, n) block of its leading rows; the rest is
    zero (see ``reverse_sweep(compact=...)``).
    """
    a, b = _t(a), _t(b)
    k = a.shape[-1]
    if a.ndim != 2 or b.ndim != 2 or k > b.shape[0]:
        raise ValueError(f"matmul_prefix shape mismatch: {a.shape} @ {b.shape}")
    top = b.data[:k]

    def backward(g):
        ga = g @ top.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return record(a.data @ top, (a, b), backward)


def take_rows(a, rows) -> Tensor:
    """Rows ``rows`` (distinct indices) of a 2-D tensor."""
    a = _t(a)
    rows = np.asarray(rows, dtype=np.intp)

    def backward(g):
        out = np.zeros(a.shape)
        out[rows] = g
        return (out,)

    return record(a.data[rows], (a,), backward)


def scatter_rows(a, rows, n: int) -> Tensor:
    """An ``n``-row zero array with the rows of ``a`` placed at ``rows`` (distinct)."""
    a = _t(a)
    rows = np.asarray(rows, dtype=np.intp)
    out = np.zeros((n,) + a.shape[1:])
    out[rows] = a.data
    return record(out, (a,), lambda g: (g[rows],))


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _t(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return div(sum(a, axis=axis, keepdims=keepdims), float(n))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = _t(a)
    inv = np.argsort(axes)
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_t(x) for x in tensors]
    sizes = [x.shape[axis] for x in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return record(np.concatenate([x.data for x in tensors], axis=axis), tuple(tensors), backward)


def pad_axis(a, length: int, axis: int = 1) -> Tensor:
    """Zero-pad ``a`` at the end of ``axis`` up to ``length``."""
    a = _t(a)
    n = a.shape[axis]
    if n == length:
        return a
    if n > length:
        raise ValueError(f"cannot pad axis of size {n} down to {length}")
    widths = [(0, 0)] * a.ndim
    widths[axis] = (0, length - n)
    index = [slice(None)] * a.ndim
    index[axis] = slice(0, n)
    index = tuple(index)
    return record(np.pad(a.data, widths), (a,), lambda g: (g[index],))


def relu(a) -> Tensor:
    a = _t(a)
    pos = a.data > 0
    return record(np.where(pos, a.data, 0.0), (a,), lambda g: (np.where(pos, g, 0.0),))


def tanh(a) -> Tensor:
    a = _t(a)
    y = np.tanh(a.data)
    return record(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a) -> Tensor:
    a = _t(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record(y, (a,), lambda g: (g * y * (1.0 - y),))


def exp(a) -> Tensor:
    a = _t(a)
    y = np.exp(a.data)
    return record(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = _t(a)
    return record(np.log(a.data), (a,), lambda g: (g / a.data,))


def softmax(a, axis: int = -1, mask=None) -> Tensor:
    """Normalized exponential along ``axis``.

    ``mask`` (broadcastable bool) marks admissible entries; excluded entries
    get probability exactly zero. A slice with no admissible entry is an error.
    """
    a = _t(a)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(np.any(np.broadcast_to(mask, x.shape), axis=axis)):
            raise ValueError("softmax over a fully masked slice")
        x = np.where(mask, x, -np.inf)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return record(p, (a,), backward)


def where(mask, a, fill: float = 0.0) -> Tensor:
    """Keep ``a`` where ``mask`` holds, ``fill`` elsewhere (no gradient there)."""
    a = _t(a)
    mask = np.asarray(mask, dtype=bool)
    return record(
        np.where(mask, a.data, fill),
        (a,),
        lambda g: (_unbroadcast(np.where(mask, g, 0.0), a.shape),),
    )


def clamp_min(a, lo: float) -> Tensor:
    a = _t(a)
    keep = a.data >= lo
    return record(np.where(keep, a.data, lo), (a,), lambda g: (np.where(keep, g, 0.0),))


def lstm_recurrence(gates_x, w_h, mask, reverse: bool = False) -> Tensor:
    """One LSTM direction over precomputed input projections.

    gates_x: (B, T, 4H) input projections including bias; w_h: (H, 4H)
    recurrent weights; mask: (B, T) bool. The state resets to zero at masked
    steps and their outputs are zero. Returns hidden states (B, T, H).
    """
    gates_x, w_h = _t(gates_x), _t(w_h)
    mask = np.ascontiguousarray(mask, dtype=bool)
    gx = np.ascontiguousarray(gates_x.data)
    wh = np.ascontiguousarray(w_h.data)
    out, acts, cells = kernels.lstm_forward(gx, wh, mask, reverse)

    def backward(g):
        dgx, dwh = kernels.lstm_backward(
            np.ascontiguousarray(g), acts, cells, out, wh, mask, reverse
        )
        return dgx, dwh

    return record(out, (gates_x, w_h), backward)
