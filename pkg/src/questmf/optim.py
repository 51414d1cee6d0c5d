"""AdamW with decoupled weight decay."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .autograd import Tensor


class AdamW:
    """Bias-corrected Adam with weight decay applied outside the gradient term.

    Parameters are updated in place. The moment buffers live in ``m`` and
    ``v`` keyed by parameter, and ``step`` counts completed updates.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 5e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {p: np.zeros_like(p.data) for p in self.params}
        self.v = {p: np.zeros_like(p.data) for p in self.params}
        # elements past extent[p] have never had a nonzero moment
        self.extent = {p: 0 for p in self.params}

    def step(self, grads: Mapping[Tensor, np.ndarray]) -> None:
        """One update. A gradient may cover only the leading rows of its
        parameter (``reverse_sweep(compact=True)``); missing rows count as zero.
        """
        for p in self.params:
            g = grads[p]
            if g.shape != p.shape and (
                g.ndim != p.ndim or g.ndim == 0 or g.shape[1:] != p.shape[1:] or g.shape[0] > p.shape[0]
            ):
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        for p in self.params:
            # one reduction pass; any inf/nan element makes the sum non-finite
            if not np.isfinite(np.sum(grads[p])):
                raise FloatingPointError(f"non-finite gradient for {p.name or p}")
        self.step_count += 1
        for p in self.params:
            g = grads[p]
            self.extent[p] = max(self.extent[p], g.size)
            kernels.adamw_update(
                p.data, g, self.m[p], self.v[p], self.lr, self.beta1,
                self.beta2, self.eps, self.weight_decay, self.step_count, self.extent[p],
            )
