"""Dice loss with its analytic gradient, plus pixel-level accuracy metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor4


class UndefinedRateError(ValueError):
    """A rate whose denominator is zero; never silently reported as 0."""


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def _check_pair(pred: Tensor4, target: Tensor4, op: str) -> None:
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: shape mismatch {pred.shape} vs {target.shape}")


def _check_binary(target: Tensor4, op: str) -> None:
    t = target.array
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValueError(f"{op}: target must be binary (0/1)")


def dice_loss(pred: Tensor4, target: Tensor4, smooth: float = 1.0, per_sample: bool = False) -> float:
    """1 - smoothed dice overlap; 0 exactly when pred equals a non-empty target.

    Computed globally over the whole batch by default; ``per_sample``
    averages one dice term per batch item instead.
    """
    _check_pair(pred, target, "dice_loss")
    _check_binary(target, "dice_loss")
    if smooth <= 0:
        raise ValueError(f"dice_loss: smooth must be > 0, got {smooth}")
    p, t = pred.array, target.array
    if per_sample:
        inter = (p * t).sum(axis=(1, 2, 3))
        denom = p.sum(axis=(1, 2, 3)) + t.sum(axis=(1, 2, 3)) + smooth
        return float(np.mean(1.0 - (2.0 * inter + smooth) / denom))
    inter = float((p * t).sum())
    denom = float(p.sum() + t.sum() + smooth)
    return 1.0 - (2.0 * inter + smooth) / denom


def dice_loss_grad(pred: Tensor4, target: Tensor4, smooth: float = 1.0, per_sample: bool = False) -> Tensor4:
    """d(dice_loss)/d(pred): -(2*t*D - (2*I + smooth)) / D**2 elementwise."""
    _check_pair(pred, target, "dice_loss_grad")
    _check_binary(target, "dice_loss_grad")
    if smooth <= 0:
        raise ValueError(f"dice_loss_grad: smooth must be > 0, got {smooth}")
    p, t = pred.array, target.array
    if per_sample:
        inter = (p * t).sum(axis=(1, 2, 3), keepdims=True)
        denom = p.sum(axis=(1, 2, 3), keepdims=True) + t.sum(axis=(1, 2, 3), keepdims=True) + smooth
        g = -(2.0 * t * denom - (2.0 * inter + smooth)) / (denom * denom)
        return Tensor4(g / p.shape[0])
    inter = float((p * t).sum())
    denom = float(p.sum() + t.sum() + smooth)
    return Tensor4(-(2.0 * t * denom - (2.0 * inter + smooth)) / (denom * denom))


def confusion(pred: Tensor4, target: Tensor4, threshold: float = 0.5) -> ConfusionCounts:
    """Pixel tallies at the given operating point; positive iff pred > threshold (strict)."""
    _check_pair(pred, target, "confusion")
    pos = pred.array > threshold
    truth = target.array > 0.5
    tp = int(np.count_nonzero(pos & truth))
    fp = int(np.count_nonzero(pos & ~truth))
    fn = int(np.count_nonzero(~pos & truth))
    tn = int(np.count_nonzero(~pos & ~truth))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def metrics(c: ConfusionCounts) -> tuple[float, float, float]:
    """(accuracy, true-positive rate, true-negative rate) from pixel counts."""
    if c.tp + c.fn == 0:
        raise UndefinedRateError("undefined rate: TPR has no positive ground-truth pixels")
    if c.tn + c.fp == 0:
        raise UndefinedRateError("undefined rate: TNR has no negative ground-truth pixels")
    acc = (c.tp + c.tn) / c.total
    tpr = c.tp / (c.tp + c.fn)
    tnr = c.tn / (c.tn + c.fp)
    return acc, tpr, tnr
