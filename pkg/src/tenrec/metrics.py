"""Recovery metrics: relative error over concatenated minibatches, outlier F1."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .synth import GroundTruth
from .tensor import fold, unfold

__all__ = ["EvalReport", "zero_fibers", "relative_error", "f1_outliers"]

DEFAULT_BURN_IN = 10


@dataclass
class EvalReport:
    """Metrics for one evaluated stream."""

    relative_error: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    loss_trace: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    state_bytes: int | None = None


def zero_fibers(x: np.ndarray, fibers: Iterable[int], mode: int = 1) -> np.ndarray:
    """Copy of ``x`` with the given unfolding columns zeroed."""
    cols = sorted(int(j) for j in fibers)
    xm = unfold(x, mode)
    if cols:
        xm[:, cols] = 0.0
    return fold(xm, mode, x.shape)


def relative_error(
    x_hats: Sequence[np.ndarray],
    truths: Sequence[GroundTruth],
    flags: Sequence[Iterable[int]],
    burn_in: int = DEFAULT_BURN_IN,
    outlier_mode: int = 1,
) -> float:
    """Frobenius error ratio over minibatches concatenated after ``burn_in``.

    Estimates are zeroed on their flagged fibers before comparison; the clean
    ground truth is already zero on the truly corrupted fibers.
    """
    if not len(x_hats) == len(truths) == len(flags):
        raise ValueError("x_hats, truths and flags must be aligned")
    if len(x_hats) <= burn_in:
        raise ValueError(f"need more than burn_in={burn_in} minibatches")
    est = [
        zero_fibers(xh, fl, outlier_mode)
        for xh, fl in zip(x_hats[burn_in:], flags[burn_in:])
    ]
    ref = [tr.clean for tr in truths[burn_in:]]
    est_all = np.concatenate(est, axis=-1)
    ref_all = np.concatenate(ref, axis=-1)
    denom = float(np.linalg.norm(ref_all.ravel()))
    if denom == 0.0:
        raise ValueError("ground truth is identically zero after burn-in")
    return float(np.linalg.norm((ref_all - est_all).ravel()) / denom)


def f1_outliers(
    flags: Sequence[Iterable[int]],
    truths: Sequence[GroundTruth],
    burn_in: int = DEFAULT_BURN_IN,
) -> tuple[float, float, float]:
    """Precision, recall and F1 of flagged fibers, pooled after ``burn_in``.

    Counts are taken per minibatch (a fiber index flagged in one minibatch is
    distinct from the same index in another). With nothing flagged precision
    defaults to 1, with nothing corrupted recall defaults to 1, so a clean
    stream with no flags scores a perfect 1.
    """
    if len(flags) != len(truths):
        raise ValueError("flags and truths must be aligned")
    if len(flags) <= burn_in:
        raise ValueError(f"need more than burn_in={burn_in} minibatches")
    tp = fp = fn = 0
    for fl, tr in zip(flags[burn_in:], truths[burn_in:]):
        flagged = {int(j) for j in fl}
        actual = {int(j) for j in tr.corrupt_fibers}
        tp += len(flagged & actual)
        fp += len(flagged - actual)
        fn += len(actual - flagged)
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
