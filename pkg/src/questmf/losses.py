"""Training objectives: MSE, ordinal log-loss and its class-imbalance weighting.

The ordinal log-loss penalises probability placed on each wrong class in
proportion to its ordinal distance from the true class::

    oll(p, y) = -sum_i log(1 - p_i) * |y - i| ** alpha

and the imbalanced variant multiplies it by ``w(y) ** beta`` where
``w(y) = n_total / n_y`` is computed from training-split label counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Tensor, tensor

N_CLASSES = 4
LOSS_KINDS = ("mse", "oll", "imboll")


@dataclass(frozen=True)
class LossConfig:
    kind: str = "imboll"
    alpha: float = 1.0
    beta: float = 0.5
    eps: float = 1e-12

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta >= 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.eps < 1e-6:
            raise ValueError("eps must lie in (0, 1e-6)")

    @property
    def is_classification(self) -> bool:
        return self.kind != "mse"


def class_distance(y: int, i: int, n_classes: int = N_CLASSES) -> int:
    for c in (y, i):
        if not 0 <= c < n_classes:
            raise ValueError(f"class {c} out of range 0..{n_classes - 1}")
    return abs(int(y) - int(i))


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights ``n_total / n_y``; every class must occur."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError(f"empty class in label counts {counts.tolist()}")
    return counts.sum() / counts


def class_weight_table(labels, pooled: bool = False, n_classes: int = N_CLASSES) -> np.ndarray:
    """Per-question weight rows from a (sessions, questions) label matrix.

    With ``pooled`` the counts of all questions are merged and every question
    gets the same row.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.ndim != 2:
        raise ValueError("labels must be (sessions, questions)")
    if pooled:
        row = class_weights(np.bincount(labels.ravel(), minlength=n_classes))
        return np.tile(row, (labels.shape[1], 1))
    return np.stack(
        [class_weights(np.bincount(labels[:, q], minlength=n_classes)) for q in range(labels.shape[1])]
    )


def _distance_matrix(y: np.ndarray, alpha: float, n_classes: int) -> np.ndarray:
    return np.abs(y[..., None] - np.arange(n_classes)).astype(np.float64) ** alpha


def _check_probs(p: np.ndarray) -> None:
    if p.shape[-1] != N_CLASSES:
        raise ValueError(f"expected {N_CLASSES} class probabilities, got {p.shape[-1]}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("invalid probability vector")


def _check_labels(y: np.ndarray) -> None:
    if np.any(y < 0) or np.any(y >= N_CLASSES):
        raise ValueError("class label out of range")


def oll_loss(probs, y, alpha: float = 1.0, eps: float = 1e-12) -> Tensor:
    """Per-sample ordinal log-loss; ``probs`` is (..., 4), ``y`` matches (...)."""
    probs = probs if isinstance(probs, Tensor) else tensor(probs)
    y = np.asarray(y, dtype=int)
    _check_probs(probs.data)
    _check_labels(y)
    dist = _distance_matrix(y, alpha, N_CLASSES)
    log_comp = ops.log(ops.clamp_min(ops.sub(1.0, probs), eps))
    return ops.neg(ops.sum(ops.mul(log_comp, dist), axis=-1))


def imboll_loss(probs, y, alpha: float, beta: float, weights, eps: float = 1e-12) -> Tensor:
    """Ordinal log-loss scaled by ``weights[y] ** beta`` per sample."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (N_CLASSES,) or not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ValueError("weights must be 4 positive finite values")
    y = np.asarray(y, dtype=int)
    base = oll_loss(probs, y, alpha, eps)
    return ops.mul(base, weights[y] ** beta)


def mse_loss(prediction, target) -> Tensor:
    """Per-sample squared error."""
    prediction = prediction if isinstance(prediction, Tensor) else tensor(prediction)
    diff = ops.sub(prediction, np.asarray(target, dtype=np.float64))
    return ops.mul(diff, diff)


def batch_loss(outputs: Tensor, targets, config: LossConfig, weights=None) -> Tensor:
    """Mean loss over a batch of model outputs.

    Classification outputs are (B, 4) logits mapped through softmax;
    regression outputs are (B, 1) or (B,) scalars.
    """
    targets = np.asarray(targets)
    if config.kind == "mse":
        pred = ops.reshape(outputs, (outputs.shape[0],))
        return ops.mean(mse_loss(pred, targets))
    probs = ops.softmax(outputs, axis=-1)
    if config.kind == "oll":
        per = oll_loss(probs, targets, config.alpha, config.eps)
    else:
        if weights is None:
            raise ValueError("imboll needs class weights")
        per = imboll_loss(probs, targets, config.alpha, config.beta, weights, config.eps)
    return ops.mean(per)
