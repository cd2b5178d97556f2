"""Synthetic minibatch streams: shared low-rank structure plus fiber outliers.

Every minibatch draws a fresh Gaussian core against factor matrices that stay
fixed for the whole stream, so all minibatches share one low-rank basis. A
chosen fraction of mode-1 fibers is replaced by uniform noise, and the same
fibers are zeroed in the clean ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .tensor import fiber_count, fold, mode_n_product, unfold

__all__ = ["SynthSpec", "GroundTruth", "gen_orthobasis", "gen_stream"]

_FACTORS_KEY = 1
_MINIBATCH_KEY = 2


@dataclass(frozen=True)
class SynthSpec:
    """Everything needed to generate one reproducible stream."""

    minibatch_shape: tuple[int, ...]
    core_dims: tuple[int, ...]
    num_minibatches: int
    corruption_ratio: float = 0.05
    corruption_magnitude: float = 2.0
    observation_ratio: float = 1.0
    seed: int = 0
    # Exact-count masking instead of i.i.d. Bernoulli, for deterministic tests.
    exact_mask: bool = False

    def __post_init__(self) -> None:
        shape = tuple(int(s) for s in self.minibatch_shape)
        core = tuple(int(c) for c in self.core_dims)
        object.__setattr__(self, "minibatch_shape", shape)
        object.__setattr__(self, "core_dims", core)
        if len(shape) < 2:
            raise ValueError("minibatch must have order >= 2")
        if len(core) != len(shape):
            raise ValueError("core_dims must match the tensor order")
        if any(s < 1 for s in shape):
            raise ValueError(f"extents must be positive, got {shape}")
        if any(not 1 <= c <= s for c, s in zip(core, shape)):
            raise ValueError(f"core dims {core} must lie in [1, extent] for {shape}")
        if self.num_minibatches < 0:
            raise ValueError("num_minibatches must be >= 0")
        if not 0.0 <= self.corruption_ratio <= 1.0:
            raise ValueError("corruption_ratio must be in [0, 1]")
        if self.corruption_magnitude <= 0.0:
            raise ValueError("corruption_magnitude must be positive")
        if not 0.0 < self.observation_ratio <= 1.0:
            raise ValueError("observation_ratio must be in (0, 1]")


@dataclass
class GroundTruth:
    """Per-minibatch truth: clean data, injected outliers, mask, fiber indices.

    ``clean`` already has the corrupted fibers zeroed, and ``outliers`` is
    supported exactly on those fibers, so observed uncorrupted entries of the
    stream equal ``clean`` there. ``mask`` is None for full observation.
    """

    clean: np.ndarray
    outliers: np.ndarray
    mask: np.ndarray | None
    corrupt_fibers: frozenset[int]


def gen_orthobasis(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Orthonormal columns from Gram-Schmidt on standard Gaussian draws.

    Each draw is orthogonalized twice against the accepted columns to keep
    orthogonality at machine precision; a draw whose projection residual is
    numerically dependent (norm < 1e-10) is rejected and redrawn.
    """
    if cols > rows:
        raise ValueError(f"cannot build {cols} orthonormal columns in R^{rows}")
    q = np.empty((rows, cols))
    k = 0
    while k < cols:
        v = rng.standard_normal(rows)
        for _ in range(2):
            for j in range(k):
                v -= (q[:, j] @ v) * q[:, j]
        norm = float(np.linalg.norm(v))
        if norm < 1e-10:
            continue
        q[:, k] = v / norm
        k += 1
    return q


def gen_stream(spec: SynthSpec) -> Iterator[tuple[np.ndarray, np.ndarray | None, GroundTruth]]:
    """Yield ``(observed, mask, truth)`` triples, bit-deterministic in the spec."""
    shape = spec.minibatch_shape
    factors_rng = np.random.default_rng(
        np.random.SeedSequence(entropy=spec.seed, spawn_key=(_FACTORS_KEY,))
    )
    factors = [
        gen_orthobasis(extent, core, factors_rng)
        for extent, core in zip(shape, spec.core_dims)
    ]
    n_fibers = fiber_count(shape, 1)
    n_corrupt = int(round(spec.corruption_ratio * n_fibers))

    for t in range(spec.num_minibatches):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=spec.seed, spawn_key=(_MINIBATCH_KEY, t))
        )
        core = rng.standard_normal(spec.core_dims)
        clean = core
        for i, factor in enumerate(factors, start=1):
            clean = mode_n_product(clean, factor, i)

        noise = rng.uniform(
            -spec.corruption_magnitude, spec.corruption_magnitude, size=shape
        )
        corrupt = rng.choice(n_fibers, size=n_corrupt, replace=False)
        corrupt_set = frozenset(int(j) for j in corrupt)

        clean_mat = unfold(clean, 1)
        outlier_mat = np.zeros_like(clean_mat)
        if n_corrupt:
            cols = np.sort(corrupt)
            outlier_mat[:, cols] = unfold(noise, 1)[:, cols]
            clean_mat[:, cols] = 0.0
        clean = fold(clean_mat, 1, shape)
        outliers = fold(outlier_mat, 1, shape)
        observed = clean + outliers

        mask: np.ndarray | None = None
        if spec.observation_ratio < 1.0:
            if spec.exact_mask:
                n_obs = int(round(spec.observation_ratio * observed.size))
                flat = np.zeros(observed.size, dtype=bool)
                flat[rng.choice(observed.size, size=max(n_obs, 1), replace=False)] = True
                mask = flat.reshape(shape, order="F")
            else:
                mask = rng.random(shape) < spec.observation_ratio
                if not mask.any():
                    mask.flat[int(rng.integers(observed.size))] = True
            observed = np.where(mask, observed, 0.0)

        yield observed, mask, GroundTruth(clean, outliers, mask, corrupt_set)
