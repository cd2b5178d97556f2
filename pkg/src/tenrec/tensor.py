"""Dense N-way tensor algebra: unfold/fold, inner products, mode products.

Tensors are plain float64 ``numpy.ndarray`` values of order >= 2. Modes are
1-based, matching the usual multilinear-algebra convention. The unfolding
ordering is the canonical one: column ``j`` of the mode-``n`` unfolding
corresponds to the multi-index over the non-``n`` dimensions with the
lowest-numbered index varying fastest.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "unfold",
    "fold",
    "inner",
    "frob_norm",
    "mode_n_product",
    "l21_norm",
    "fiber_count",
    "fiber_columns",
    "fiber_multi_index",
    "fiber_column_index",
]


def _check_mode(mode: int, ndim: int) -> int:
    if not 1 <= mode <= ndim:
        raise ValueError(f"mode must be in [1, {ndim}], got {mode}")
    return mode - 1


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Matricize ``x`` along ``mode`` (1-based).

    The result has ``x.shape[mode-1]`` rows; its columns are the mode-``mode``
    fibers ordered with the lowest-numbered remaining index varying fastest.
    """
    x = np.asarray(x, dtype=float)
    axis = _check_mode(mode, x.ndim)
    return np.reshape(np.moveaxis(x, axis, 0), (x.shape[axis], -1), order="F")


def fold(m: np.ndarray, mode: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`: rebuild a tensor of ``shape`` from ``m``."""
    m = np.asarray(m, dtype=float)
    shape = tuple(int(s) for s in shape)
    axis = _check_mode(mode, len(shape))
    rest = shape[:axis] + shape[axis + 1 :]
    expected = (shape[axis], math.prod(rest))
    if m.shape != expected:
        raise ValueError(
            f"matrix shape {m.shape} inconsistent with mode-{mode} unfolding "
            f"of {shape} (expected {expected})"
        )
    return np.moveaxis(np.reshape(m, (shape[axis],) + rest, order="F"), 0, axis)


def inner(x: np.ndarray, y: np.ndarray) -> float:
    """Sum of the element-wise product of two same-shape tensors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.dot(x.ravel(), y.ravel()))


def frob_norm(x: np.ndarray) -> float:
    """Frobenius norm, ``sqrt(inner(x, x))``."""
    return float(np.linalg.norm(np.asarray(x, dtype=float).ravel()))


def mode_n_product(x: np.ndarray, a: np.ndarray, mode: int) -> np.ndarray:
    """Multiply ``x`` by the matrix ``a`` along ``mode``.

    ``a`` must have as many columns as the extent of ``x`` at ``mode``; the
    result replaces that extent with ``a.shape[0]``.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    axis = _check_mode(mode, x.ndim)
    if a.ndim != 2 or a.shape[1] != x.shape[axis]:
        raise ValueError(
            f"matrix of shape {a.shape} cannot contract mode {mode} "
            f"of tensor with shape {x.shape}"
        )
    new_shape = x.shape[:axis] + (a.shape[0],) + x.shape[axis + 1 :]
    return fold(a @ unfold(x, mode), mode, new_shape)


def l21_norm(m: np.ndarray) -> float:
    """Sum of the Euclidean norms of the columns of ``m``."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got ndim={m.ndim}")
    return float(np.sum(np.linalg.norm(m, axis=0)))


def fiber_count(shape: Sequence[int], mode: int) -> int:
    """Number of mode-``mode`` fibers, i.e. columns of the unfolding."""
    shape = tuple(int(s) for s in shape)
    axis = _check_mode(mode, len(shape))
    return math.prod(shape[:axis] + shape[axis + 1 :])


def fiber_columns(x: np.ndarray, mode: int) -> np.ndarray:
    """All mode-``mode`` fibers of ``x``, as the columns of its unfolding."""
    return unfold(x, mode)


def fiber_multi_index(shape: Sequence[int], mode: int, col: int) -> tuple[int, ...]:
    """Map unfolding column ``col`` to its 0-based non-``mode`` multi-index.

    The returned tuple runs over the dimensions in increasing mode order with
    ``mode`` removed, consistent with :func:`unfold`'s column ordering.
    """
    shape = tuple(int(s) for s in shape)
    axis = _check_mode(mode, len(shape))
    rest = shape[:axis] + shape[axis + 1 :]
    total = math.prod(rest)
    if not 0 <= col < total:
        raise ValueError(f"column {col} out of range [0, {total})")
    idx = np.unravel_index(col, rest, order="F")
    return tuple(int(i) for i in idx)


def fiber_column_index(shape: Sequence[int], mode: int, multi: Sequence[int]) -> int:
    """Inverse of :func:`fiber_multi_index`."""
    shape = tuple(int(s) for s in shape)
    axis = _check_mode(mode, len(shape))
    rest = shape[:axis] + shape[axis + 1 :]
    if len(multi) != len(rest):
        raise ValueError(f"multi-index {multi} has wrong length for {rest}")
    return int(np.ravel_multi_index(tuple(int(i) for i in multi), rest, order="F"))
