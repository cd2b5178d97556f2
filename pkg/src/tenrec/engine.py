"""Streaming recovery engine: per-mode dictionaries plus fiber-sparse outliers.

Each minibatch ``B`` is split as ``B = X + E + O`` where ``X`` is low-rank
(held as per-mode dictionary/coefficient factorizations), ``E`` is sparse in
whole fibers of the outlier mode, and ``O`` compensates unobserved entries.
Only the per-mode dictionaries and two accumulation matrices per mode carry
over between minibatches, so state size is constant for the whole stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .config import RunConfig, resolve_lambda2
from .tensor import fiber_count, fold, frob_norm, l21_norm, unfold

__all__ = [
    "DictionaryState",
    "MinibatchOutput",
    "SolveResult",
    "init_state",
    "update_R",
    "update_E",
    "update_O",
    "shrink_fibers",
    "solve_minibatch",
    "minibatch_objective",
    "reconstruct_lowrank",
    "accumulate",
    "update_dictionary",
    "dictionary_surrogate",
    "flag_outlier_fibers",
    "process_minibatch",
    "process_stream",
]

_BASIS_SEED_KEY = 101


@dataclass
class DictionaryState:
    """Per-mode dictionaries and accumulation matrices; the only carried state.

    ``basis[i]`` is I_i x r, ``gram[i]`` r x r (running sum of coefficient
    Gram matrices, symmetric PSD), ``cross[i]`` I_i x r (running sum of
    residual/coefficient cross products). Sizes never change after init.
    """

    minibatch_shape: tuple[int, ...]
    rank: int
    basis: list[np.ndarray]
    gram: list[np.ndarray]
    cross: list[np.ndarray]
    minibatch_count: int = 0

    @property
    def n_modes(self) -> int:
        return len(self.minibatch_shape)

    def copy(self) -> "DictionaryState":
        return DictionaryState(
            minibatch_shape=self.minibatch_shape,
            rank=self.rank,
            basis=[m.copy() for m in self.basis],
            gram=[m.copy() for m in self.gram],
            cross=[m.copy() for m in self.cross],
            minibatch_count=self.minibatch_count,
        )

    def state_bytes(self) -> int:
        """Total bytes held in the carried matrices."""
        return sum(m.nbytes for m in self.basis + self.gram + self.cross)


@dataclass
class SolveResult:
    """Decomposition of one minibatch under a fixed dictionary."""

    r_coeffs: list[np.ndarray]
    e_hat: np.ndarray
    o_hat: np.ndarray
    inner_iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)


@dataclass
class MinibatchOutput:
    """Everything the stream reports for one processed minibatch."""

    x_hat: np.ndarray
    e_hat: np.ndarray
    o_hat: np.ndarray
    r_coeffs: list[np.ndarray]
    outlier_fibers: frozenset[int]
    inner_iterations_used: int
    converged: bool
    loss: float


def init_state(minibatch_shape: Sequence[int], config: RunConfig) -> DictionaryState:
    """Fresh state: uniform(0,1) dictionaries, zero accumulation matrices.

    Each mode's dictionary comes from its own generator derived from
    ``config.seed`` and the mode index, so init is reproducible per mode.
    """
    shape = tuple(int(s) for s in minibatch_shape)
    if len(shape) < 2:
        raise ValueError("minibatch must have order >= 2")
    if any(s < 1 for s in shape):
        raise ValueError(f"extents must be positive, got {shape}")
    r = config.target_rank
    basis = []
    for mode, extent in enumerate(shape, start=1):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=config.seed, spawn_key=(_BASIS_SEED_KEY, mode))
        )
        basis.append(rng.uniform(0.0, 1.0, size=(extent, r)))
    gram = [np.zeros((r, r)) for _ in shape]
    cross = [np.zeros((extent, r)) for extent in shape]
    return DictionaryState(shape, r, basis, gram, cross)


def _mean_reconstruction(
    basis: Sequence[np.ndarray], coeffs: Sequence[np.ndarray], shape: Sequence[int]
) -> np.ndarray:
    n = len(basis)
    out = np.zeros(tuple(shape))
    for i, (lmat, rmat) in enumerate(zip(basis, coeffs), start=1):
        out += fold(lmat @ rmat.T, i, shape)
    out /= n
    return out


def reconstruct_lowrank(
    basis: Sequence[np.ndarray], coeffs: Sequence[np.ndarray], shape: Sequence[int]
) -> np.ndarray:
    """Low-rank estimate: the per-mode reconstructions averaged."""
    shape = tuple(int(s) for s in shape)
    if len(basis) != len(coeffs) or len(basis) != len(shape):
        raise ValueError("need one dictionary and one coefficient matrix per mode")
    for i, (lmat, rmat) in enumerate(zip(basis, coeffs), start=1):
        if lmat.shape[0] != shape[i - 1] or lmat.shape[1] != rmat.shape[1]:
            raise ValueError(f"inconsistent factor shapes at mode {i}")
        if rmat.shape[0] != fiber_count(shape, i):
            raise ValueError(f"coefficient rows at mode {i} do not match shape {shape}")
    return _mean_reconstruction(basis, coeffs, shape)


def shrink_fibers(c: np.ndarray, tau: float, mode: int = 1) -> np.ndarray:
    """Column-wise shrinkage of the mode-``mode`` unfolding of ``c``.

    Each column is scaled by ``max(0, 1 - tau/||col||)``; zero columns stay
    zero. This is the proximal step that produces exactly-zero clean fibers.
    """
    cm = unfold(c, mode)
    norms = np.linalg.norm(cm, axis=0)
    safe = np.where(norms > 0.0, norms, 1.0)
    scale = np.maximum(0.0, 1.0 - tau / safe)
    scale[norms == 0.0] = 0.0
    return fold(cm * scale, mode, c.shape)


def update_E(
    basis: Sequence[np.ndarray],
    coeffs: Sequence[np.ndarray],
    b: np.ndarray,
    o: np.ndarray,
    lambda2: float,
    outlier_mode: int = 1,
) -> np.ndarray:
    """Exact outlier update: shrink fibers of the mode-averaged residual."""
    if lambda2 <= 0:
        raise ValueError("lambda2 must be positive")
    b = np.asarray(b, dtype=float)
    n = b.ndim
    c = b - o - _mean_reconstruction(basis, coeffs, b.shape)
    return shrink_fibers(c, lambda2 / n, outlier_mode)


def update_R(
    basis: Sequence[np.ndarray],
    b: np.ndarray,
    e: np.ndarray,
    o: np.ndarray,
    lambda1: float,
) -> list[np.ndarray]:
    """Exact per-mode coefficient update via the ridge normal equations.

    Solves ``(L_i^T L_i + lambda1 I) R_i^T = L_i^T (B - E - O)_(i)`` with a
    Cholesky factorization (the system is positive definite for lambda1 > 0).
    """
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    b = np.asarray(b, dtype=float)
    target = b - e - o
    out = []
    for i, lmat in enumerate(basis, start=1):
        r = lmat.shape[1]
        factor = cho_factor(lmat.T @ lmat + lambda1 * np.eye(r))
        out.append(cho_solve(factor, lmat.T @ unfold(target, i)).T)
    return out


def update_O(
    basis: Sequence[np.ndarray],
    coeffs: Sequence[np.ndarray],
    b: np.ndarray,
    e: np.ndarray,
    mask: np.ndarray,
) -> np.ndarray:
    """Compensation update: mean residual off the observed set, zero on it."""
    b = np.asarray(b, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != b.shape:
        raise ValueError(f"mask shape {mask.shape} does not match data {b.shape}")
    residual = b - e - _mean_reconstruction(basis, coeffs, b.shape)
    return np.where(mask, 0.0, residual)


def minibatch_objective(
    basis: Sequence[np.ndarray],
    coeffs: Sequence[np.ndarray],
    e: np.ndarray,
    o: np.ndarray,
    b: np.ndarray,
    lambda1: float,
    lambda2: float,
    outlier_mode: int = 1,
) -> float:
    """Value of the per-minibatch loss at the given iterate."""
    b = np.asarray(b, dtype=float)
    target = b - e - o
    total = 0.0
    for i, (lmat, rmat) in enumerate(zip(basis, coeffs), start=1):
        diff = lmat @ rmat.T - unfold(target, i)
        total += 0.5 * float(np.sum(diff * diff))
        total += 0.5 * lambda1 * float(np.sum(rmat * rmat))
    total += lambda2 * l21_norm(unfold(e, outlier_mode))
    return total


def solve_minibatch(
    state: DictionaryState,
    b: np.ndarray,
    mask: np.ndarray | None,
    config: RunConfig,
    record_objective: bool = False,
) -> SolveResult:
    """Alternate exact E / R / O updates until the iterate stops moving.

    Convergence holds when the largest Frobenius change among the coefficient
    matrices and the outlier tensor, relative to ``||B||_F``, drops to
    ``config.epsilon``. A zero-norm minibatch converges immediately with
    all-zero outputs. Hitting ``max_inner_iters`` reports ``converged=False``
    instead of raising, so a stream never stalls.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != state.minibatch_shape:
        raise ValueError(
            f"minibatch shape {b.shape} does not match state {state.minibatch_shape}"
        )
    n = b.ndim
    shape = b.shape
    lam2 = resolve_lambda2(config, shape)

    full_obs = mask is None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != shape:
            raise ValueError(f"mask shape {mask.shape} does not match data {shape}")
        if not mask.any():
            raise ValueError("minibatch has no observed entries")
        full_obs = bool(mask.all())
        b = np.where(mask, b, 0.0)

    coeffs = [np.zeros((fiber_count(shape, i), state.rank)) for i in range(1, n + 1)]
    e = np.zeros(shape)
    o = np.zeros(shape)

    norm_b = frob_norm(b)
    if norm_b == 0.0:
        return SolveResult(coeffs, e, o, 0, True, [0.0] if record_objective else [])

    # The dictionary is fixed for the whole inner loop, so factor the ridge
    # normal matrix once per mode and keep the solved projector around; the
    # per-iteration coefficient update is then a single matrix product.
    eye = np.eye(state.rank)
    projectors = []
    for lmat in state.basis:
        factor = cho_factor(lmat.T @ lmat + config.lambda1 * eye, check_finite=False)
        projectors.append(cho_solve(factor, lmat.T, check_finite=False))

    recon_mean = np.zeros(shape)
    trace: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, config.max_inner_iters + 1):
        e_new = shrink_fibers(b - o - recon_mean, lam2 / n, config.outlier_mode)

        target = b - e_new - o
        coeffs_new = [
            (projectors[i] @ unfold(target, i + 1)).T for i in range(n)
        ]

        recon_mean = _mean_reconstruction(state.basis, coeffs_new, shape)
        if not full_obs:
            o = np.where(mask, 0.0, b - e_new - recon_mean)

        delta = float(np.linalg.norm((e_new - e).ravel()))
        for old, new in zip(coeffs, coeffs_new):
            delta = max(delta, float(np.linalg.norm((new - old).ravel())))
        e, coeffs = e_new, coeffs_new

        if record_objective:
            trace.append(
                minibatch_objective(
                    state.basis, coeffs, e, o, b, config.lambda1, lam2, config.outlier_mode
                )
            )
        if delta / norm_b <= config.epsilon:
            converged = True
            break

    return SolveResult(coeffs, e, o, iterations, converged, trace)


def accumulate(
    state: DictionaryState,
    b: np.ndarray,
    e: np.ndarray,
    coeffs: Sequence[np.ndarray],
    o: np.ndarray | None = None,
    include_compensation: bool = True,
) -> None:
    """Fold one minibatch into the running Gram and cross matrices."""
    b = np.asarray(b, dtype=float)
    if b.shape != state.minibatch_shape:
        raise ValueError(
            f"minibatch shape {b.shape} does not match state {state.minibatch_shape}"
        )
    target = b - e
    if o is not None and include_compensation:
        target = target - o
    for i, rmat in enumerate(coeffs):
        if rmat.shape != (fiber_count(state.minibatch_shape, i + 1), state.rank):
            raise ValueError(f"coefficient matrix at mode {i + 1} has wrong shape")
        state.gram[i] += rmat.T @ rmat
        state.cross[i] += unfold(target, i + 1) @ rmat
    state.minibatch_count += 1


def update_dictionary(state: DictionaryState, lambda1: float) -> None:
    """One block-coordinate sweep over the columns of every dictionary.

    Each column is set to the exact minimizer of the accumulated quadratic
    surrogate with the other columns fixed, so the surrogate never increases.
    """
    if lambda1 <= 0:
        raise ValueError("lambda1 must be positive")
    eye = np.eye(state.rank)
    for lmat, amat, dmat in zip(state.basis, state.gram, state.cross):
        at = amat + lambda1 * eye
        for j in range(state.rank):
            lmat[:, j] += (dmat[:, j] - lmat @ at[:, j]) / at[j, j]


def dictionary_surrogate(state: DictionaryState, lambda1: float, mode: int) -> float:
    """Accumulated quadratic surrogate value for one mode's dictionary."""
    lmat = state.basis[mode - 1]
    at = state.gram[mode - 1] + lambda1 * np.eye(state.rank)
    return 0.5 * float(np.sum(lmat * (lmat @ at))) - float(np.sum(lmat * state.cross[mode - 1]))


def flag_outlier_fibers(
    e: np.ndarray, tol: float | None = None, outlier_mode: int = 1
) -> frozenset[int]:
    """Indices of unfolding columns of ``e`` whose norm exceeds ``tol``.

    Default tolerance is ``1e-12 * ||e||_F``; shrinkage leaves clean columns
    exactly zero, so the relative guard only matters for accumulated noise.
    """
    if tol is not None and tol < 0:
        raise ValueError("tol must be >= 0")
    em = unfold(e, outlier_mode)
    if tol is None:
        tol = 1e-12 * frob_norm(e)
    norms = np.linalg.norm(em, axis=0)
    return frozenset(int(j) for j in np.nonzero(norms > tol)[0])


def process_minibatch(
    state: DictionaryState,
    b: np.ndarray,
    mask: np.ndarray | None,
    config: RunConfig,
    record_objective: bool = False,
) -> MinibatchOutput:
    """One full streaming step: solve, reconstruct, flag, accumulate, sweep."""
    b = np.asarray(b, dtype=float)
    if mask is not None:
        b = np.where(np.asarray(mask, dtype=bool), b, 0.0)
    result = solve_minibatch(state, b, mask, config, record_objective)
    x_hat = reconstruct_lowrank(state.basis, result.r_coeffs, b.shape)
    flags = flag_outlier_fibers(result.e_hat, outlier_mode=config.outlier_mode)
    if result.objective_trace:
        loss = result.objective_trace[-1]
    else:
        loss = minibatch_objective(
            state.basis,
            result.r_coeffs,
            result.e_hat,
            result.o_hat,
            b,
            config.lambda1,
            resolve_lambda2(config, b.shape),
            config.outlier_mode,
        )
    accumulate(
        state,
        b,
        result.e_hat,
        result.r_coeffs,
        o=result.o_hat,
        include_compensation=config.accumulate_compensation,
    )
    update_dictionary(state, config.lambda1)
    return MinibatchOutput(
        x_hat=x_hat,
        e_hat=result.e_hat,
        o_hat=result.o_hat,
        r_coeffs=result.r_coeffs,
        outlier_fibers=flags,
        inner_iterations_used=result.inner_iterations,
        converged=result.converged,
        loss=loss,
    )


StreamSource = Iterable | Callable[[], Iterable]


def _iter_source(source: StreamSource) -> Iterator:
    return iter(source() if callable(source) else source)


def process_stream(
    source: StreamSource,
    config: RunConfig,
    state: DictionaryState | None = None,
    record_objective: bool = False,
) -> Iterator[MinibatchOutput]:
    """Run the full streaming pipeline over ``source``, yielding per minibatch.

    ``source`` yields minibatch tensors or ``(tensor, mask)`` pairs with
    ``mask=None`` meaning fully observed. For ``config.epochs > 1`` the
    source must be replayable: a sequence, or a zero-argument callable
    returning a fresh iterable per epoch. State is created lazily from the
    first minibatch (or resumed from ``state``) and its size never changes.
    """
    if config.epochs > 1 and not callable(source) and not isinstance(source, Sequence):
        raise ValueError("multi-epoch streaming needs a replayable source "
                         "(a sequence or a callable returning one)")
    for _ in range(config.epochs):
        for index, item in enumerate(_iter_source(source)):
            if isinstance(item, tuple):
                b, mask = item
            else:
                b, mask = item, None
            b = np.asarray(b, dtype=float)
            if state is None:
                state = init_state(b.shape, config)
            elif b.shape != state.minibatch_shape:
                raise ValueError(
                    f"minibatch {index} shape {b.shape} drifted from "
                    f"{state.minibatch_shape}"
                )
            yield process_minibatch(state, b, mask, config, record_objective)
