"""Independent brute-force solvers used to cross-check the engine's closed forms.

Nothing here is called by the engine itself. The SVD is a one-sided Jacobi
iteration; the block minimizers are plain (sub)gradient descent on the
minibatch objective with all other blocks held fixed.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import fold, unfold

__all__ = [
    "oracle_svd",
    "nuclear_norm",
    "descent_R",
    "descent_E",
    "descent_O",
]


def oracle_svd(
    m: np.ndarray, max_sweeps: int = 60, tol: float = 1e-15
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-sided Jacobi SVD of a small matrix: ``m == u @ diag(s) @ v.T``.

    Column pairs are rotated until every pair is orthogonal to within ``tol``
    relative to the column norms. Singular values come back non-increasing.
    Columns of ``u`` belonging to zero singular values are left zero.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2:
        raise ValueError("oracle_svd expects a matrix")
    transpose = a.shape[0] < a.shape[1]
    if transpose:
        a = a.T.copy()
    cols = a.shape[1]
    v = np.eye(cols)

    for _ in range(max_sweeps):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                app = float(a[:, p] @ a[:, p])
                aqq = float(a[:, q] @ a[:, q])
                apq = float(a[:, p] @ a[:, q])
                if app == 0.0 or aqq == 0.0:
                    continue
                if abs(apq) <= tol * math.sqrt(app * aqq):
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.hypot(1.0, tau))
                c = 1.0 / math.hypot(1.0, t)
                s = c * t
                ap = a[:, p].copy()
                a[:, p] = c * ap - s * a[:, q]
                a[:, q] = s * ap + c * a[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    else:
        raise RuntimeError(f"Jacobi SVD did not converge within {max_sweeps} sweeps")

    sigma = np.linalg.norm(a, axis=0)
    u = np.zeros_like(a)
    nonzero = sigma > 0.0
    u[:, nonzero] = a[:, nonzero] / sigma[nonzero]
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    u = u[:, order]
    v = v[:, order]
    if transpose:
        u, v = v, u
    return u, sigma, v


def nuclear_norm(m: np.ndarray) -> float:
    """Sum of singular values, via :func:`oracle_svd`."""
    return float(np.sum(oracle_svd(m)[1]))


def _mode_reconstructions(
    basis: Sequence[np.ndarray], coeffs: Sequence[np.ndarray], shape
) -> list[np.ndarray]:
    return [
        fold(lmat @ rmat.T, i, shape)
        for i, (lmat, rmat) in enumerate(zip(basis, coeffs), start=1)
    ]


def descent_R(
    basis: Sequence[np.ndarray],
    b: np.ndarray,
    e: np.ndarray,
    o: np.ndarray,
    lambda1: float,
    grad_tol: float = 1e-8,
    max_iters: int = 500_000,
) -> list[np.ndarray]:
    """Coefficient block minimizer by gradient descent, one mode at a time.

    Uses a fixed safe step ``1 / (||L||_F^2 + lambda1)`` (an upper bound on
    the gradient's Lipschitz constant) and stops when the gradient norm falls
    below ``grad_tol``. Exhausting ``max_iters`` is an error.
    """
    b = np.asarray(b, dtype=float)
    out = []
    for i, lmat in enumerate(basis, start=1):
        target = unfold(b - e - o, i)
        r = np.zeros((target.shape[1], lmat.shape[1]))
        step = 1.0 / (float(np.sum(lmat * lmat)) + lambda1)
        for _ in range(max_iters):
            grad = (lmat @ r.T - target).T @ lmat + lambda1 * r
            if float(np.linalg.norm(grad.ravel())) < grad_tol:
                break
            r -= step * grad
        else:
            raise RuntimeError("descent_R exhausted its step budget")
        out.append(r)
    return out


def _column_shrink(m: np.ndarray, thresh: float) -> np.ndarray:
    # Deliberately loop-based and local: keeps the oracle's proximal step
    # textually independent of the engine's vectorized shrinkage.
    out = np.zeros_like(m)
    for j in range(m.shape[1]):
        col = m[:, j]
        nrm = math.sqrt(float(col @ col))
        if nrm > thresh:
            out[:, j] = (1.0 - thresh / nrm) * col
    return out


def descent_E(
    basis: Sequence[np.ndarray],
    coeffs: Sequence[np.ndarray],
    b: np.ndarray,
    o: np.ndarray,
    lambda2: float,
    outlier_mode: int = 1,
    obj_tol: float = 1e-12,
    max_iters: int = 200_000,
) -> np.ndarray:
    """Outlier block minimizer by proximal gradient descent.

    The smooth part has Lipschitz constant ``N`` (the tensor order); the step
    is deliberately ``1/(2N)`` so the iteration path differs from the engine's
    single-shot closed form. Stops when the objective change per iteration
    drops below ``obj_tol``.
    """
    b = np.asarray(b, dtype=float)
    n = b.ndim
    recons = _mode_reconstructions(basis, coeffs, b.shape)

    def objective(e: np.ndarray) -> float:
        total = 0.0
        for rec in recons:
            diff = rec + e + o - b
            total += 0.5 * float(np.sum(diff * diff))
        em = unfold(e, outlier_mode)
        for j in range(em.shape[1]):
            total += lambda2 * math.sqrt(float(em[:, j] @ em[:, j]))
        return total

    step = 1.0 / (2.0 * n)
    e = np.zeros_like(b)
    prev = objective(e)
    for _ in range(max_iters):
        grad = sum(rec + e + o - b for rec in recons)
        em = unfold(e - step * grad, outlier_mode)
        e = fold(_column_shrink(em, step * lambda2), outlier_mode, b.shape)
        cur = objective(e)
        if abs(prev - cur) < obj_tol:
            return e
        prev = cur
    raise RuntimeError("descent_E exhausted its step budget")


def descent_O(
    basis: Sequence[np.ndarray],
    coeffs: Sequence[np.ndarray],
    b: np.ndarray,
    e: np.ndarray,
    mask: np.ndarray,
    grad_tol: float = 1e-8,
    max_iters: int = 200_000,
) -> np.ndarray:
    """Compensation block minimizer by projected gradient descent.

    The iterate is re-projected onto the observed-entries-are-zero constraint
    after every step; stops when the projected gradient norm is below
    ``grad_tol``.
    """
    b = np.asarray(b, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    n = b.ndim
    recons = _mode_reconstructions(basis, coeffs, b.shape)
    step = 1.0 / (2.0 * n)
    o = np.zeros_like(b)
    for _ in range(max_iters):
        grad = sum(rec + e + o - b for rec in recons)
        grad = np.where(mask, 0.0, grad)
        if float(np.linalg.norm(grad.ravel())) < grad_tol:
            return o
        o = np.where(mask, 0.0, o - step * grad)
    raise RuntimeError("descent_O exhausted its step budget")
