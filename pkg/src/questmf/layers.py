"""Neural building blocks shared by the encoders and fusion models.

Layers hold their parameters as :class:`Tensor` leaves in a flat, ordered
mapping addressed by dotted path (``"lstm.fwd.w_x"``), which is what
checkpointing and freezing operate on. Weight matrices are initialised
uniformly in ``±1/sqrt(fan_in)`` and biases at zero, each drawn from its own
stream keyed by the run seed and the parameter path.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ops
from .autograd import Tensor, parameter
from .rng import stream

TRAIN = "train"
EVAL = "eval"


class Module:
    """Parameter container with child modules, mirroring the usual nn idiom."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._fan_in: dict[str, int | None] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, shape: tuple, fan_in: int | None) -> Tensor:
        p = parameter(np.zeros(shape), name=name)
        self._params[name] = p
        self._fan_in[name] = fan_in
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def _init_specs(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p, self._fan_in[name]
        for name, child in self._children.items():
            yield from child._init_specs(prefix + name + ".")

    def initialize(self, seed: int, prefix: str = "") -> "Module":
        """Draw fresh values for every parameter from ``seed``."""
        for path, p, fan_in in self._init_specs(prefix):
            if fan_in is None:
                p.data[...] = 0.0
            else:
                bound = 1.0 / np.sqrt(fan_in)
                p.data[...] = stream(seed, "init/" + path).uniform(-bound, bound, p.shape)
        return self

    def set_trainable(self, flag: bool) -> None:
        for _, p in self.named_parameters():
            p.requires_grad = flag

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        params = self.parameters()
        if strict:
            missing = set(params) - set(state)
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, arr in state.items():
            if k not in params:
                if strict:
                    raise KeyError(f"unexpected parameter {k!r}")
                continue
            if params[k].shape != arr.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {params[k].shape}")
            params[k].data[...] = arr


def mean_pool_normalize(rows) -> np.ndarray:
    """Mean over rows, scaled to unit Euclidean length (zero stays zero)."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] == 0:
        raise ValueError("mean_pool_normalize needs a non-empty 2-D array")
    m = rows.mean(axis=0)
    norm = np.linalg.norm(m)
    return m / norm if norm > 0 else np.zeros_like(m)


def dropout(x: Tensor, rate: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity in eval mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == EVAL or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a random generator")
    keep = (rng.random(x.shape, dtype=np.float32) >= rate) / (1.0 - rate)
    return ops.mul(x, keep)


class BiLSTM(Module):
    """Bidirectional LSTM; output concatenates forward and backward states."""

    def __init__(self, input_width: int, hidden: int):
        super().__init__()
        self.input_width = input_width
        self.hidden = hidden
        for d in ("fwd", "bwd"):
            cell = self.add_module(d, Module())
            cell.add_param("w_x", (input_width, 4 * hidden), input_width)
            cell.add_param("w_h", (hidden, 4 * hidden), hidden)
            cell.add_param("b", (4 * hidden,), None)

    @property
    def output_width(self) -> int:
        return 2 * self.hidden

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        """x: (B, T, D_in) with zero rows at padded steps; mask: (B, T)."""
        if x.shape[-1] != self.input_width:
            raise ValueError(f"BiLSTM expects width {self.input_width}, got {x.shape[-1]}")
        B, T, width = x.shape
        # project only real turns; the recurrence ignores padded steps
        rows = np.flatnonzero(mask.reshape(-1))
        x_real = ops.take_rows(ops.reshape(x, (B * T, width)), rows)
        outs = []
        for d, reverse in (("fwd", False), ("bwd", True)):
            cell = self._children[d]._params
            g_real = ops.add(ops.matmul(x_real, cell["w_x"]), cell["b"])
            gx = ops.reshape(ops.scatter_rows(g_real, rows, B * T), (B, T, 4 * self.hidden))
            outs.append(ops.lstm_recurrence(gx, cell["w_h"], mask, reverse=reverse))
        return ops.concat(outs, axis=-1)


class MultiheadAttention(Module):
    """Scaled dot-product attention over H heads without biases or residuals."""

    def __init__(self, width: int, heads: int, dropout_rate: float = 0.0):
        super().__init__()
        if width % heads:
            raise ValueError(f"width {width} not divisible by {heads} heads")
        self.width = width
        self.heads = heads
        self.dropout_rate = dropout_rate
        for name in ("w_q", "w_k", "w_v", "w_o"):
            self.add_param(name, (width, width), width)

    def _split(self, t: Tensor) -> Tensor:
        B, T, _ = t.shape
        return ops.transpose(
            ops.reshape(t, (B, T, self.heads, self.width // self.heads)), (0, 2, 1, 3)
        )

    def __call__(
        self,
        query: Tensor,
        key_value: Tensor,
        key_mask: np.ndarray,
        mode: str = EVAL,
        rng: np.random.Generator | None = None,
        query_mask: np.ndarray | None = None,
    ) -> Tensor:
        """query: (B, Tq, D), key_value: (B, Tk, D), key_mask: (B, Tk) bool.

        Unbatched 2-D inputs are accepted and returned unbatched. Rows where
        ``query_mask`` is false come back as zeros.
        """
        single = query.ndim == 2
        if single:
            query = ops.reshape(query, (1,) + query.shape)
            key_value = ops.reshape(key_value, (1,) + key_value.shape)
            key_mask = np.asarray(key_mask, dtype=bool)[None]
            if query_mask is not None:
                query_mask = np.asarray(query_mask, dtype=bool)[None]
        if query.shape[-1] != self.width or key_value.shape[-1] != self.width:
            raise ValueError(
                f"attention expects width {self.width}, got {query.shape[-1]}/{key_value.shape[-1]}"
            )
        key_mask = np.asarray(key_mask, dtype=bool)
        if key_mask.shape != key_value.shape[:2]:
            raise ValueError("key mask shape does not match keys")
        if not key_mask.any(axis=-1).all():
            raise ValueError("every key position is masked")

        p = self._params
        q = self._split(ops.matmul(query, p["w_q"]))
        k = self._split(ops.matmul(key_value, p["w_k"]))
        v = self._split(ops.matmul(key_value, p["w_v"]))
        scale = 1.0 / np.sqrt(self.width // self.heads)
        scores = ops.mul(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), scale)
        weights = ops.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
        weights = dropout(weights, self.dropout_rate, mode, rng)
        ctx = ops.matmul(weights, v)
        B, _, Tq, _ = ctx.shape
        ctx = ops.reshape(ops.transpose(ctx, (0, 2, 1, 3)), (B, Tq, self.width))
        out = ops.matmul(ctx, p["w_o"])
        if query_mask is not None:
            out = ops.where(np.asarray(query_mask, dtype=bool)[..., None], out)
        if single:
            out = ops.reshape(out, out.shape[1:])
        return out


class MlpHead(Module):
    """dropout -> affine -> ReLU -> dropout -> affine."""

    def __init__(
        self,
        input_width: int,
        output_width: int,
        hidden: int = 256,
        dropouts: tuple[float, float] = (0.2, 0.2),
    ):
        super().__init__()
        self.input_width = input_width
        self.output_width = output_width
        self.dropouts = dropouts
        self.add_param("w1", (input_width, hidden), input_width)
        self.add_param("b1", (hidden,), None)
        self.add_param("w2", (hidden, output_width), hidden)
        self.add_param("b2", (output_width,), None)

    def __call__(self, x: Tensor, mode: str = EVAL, rng=None) -> Tensor:
        """A narrower ``x`` stands for its zero-padding to ``input_width``."""
        single = x.ndim == 1
        if single:
            x = ops.reshape(x, (1, x.shape[0]))
        if x.shape[-1] > self.input_width:
            raise ValueError(f"MLP head expects width {self.input_width}, got {x.shape[-1]}")
        p = self._params
        h = dropout(x, self.dropouts[0], mode, rng)
        h = ops.relu(ops.add(ops.matmul_prefix(h, p["w1"]), p["b1"]))
        h = dropout(h, self.dropouts[1], mode, rng)
        out = ops.add(ops.matmul(h, p["w2"]), p["b2"])
        return ops.reshape(out, (self.output_width,)) if single else out
