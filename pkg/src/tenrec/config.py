"""Run configuration for the streaming recovery engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

__all__ = ["RunConfig", "lambda2_from", "resolve_lambda2"]


@dataclass(frozen=True)
class RunConfig:
    """Hyperparameters for a streaming recovery run.

    ``lambda2`` normally comes from the ``alpha`` scaling rule (see
    :func:`lambda2_from`); setting it explicitly overrides the rule.
    ``outlier_mode`` selects the mode along which corrupted fibers are
    structured; the sparsity penalty acts on columns of that unfolding.
    """

    target_rank: int
    alpha: float = 1.0
    lambda1: float = 0.01
    lambda2: float | None = None
    epsilon: float = 1e-4
    max_inner_iters: int = 100
    minibatch_extent: int = 1
    epochs: int = 1
    seed: int = 0
    outlier_mode: int = 1
    # Subtract the compensation tensor when accumulating the cross matrices,
    # so the dictionary fits compensated residuals instead of imputed zeros.
    accumulate_compensation: bool = True

    def __post_init__(self) -> None:
        if self.target_rank < 1:
            raise ValueError("target_rank must be >= 1")
        if self.lambda1 <= 0:
            raise ValueError("lambda1 must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lambda2 is not None and self.lambda2 <= 0:
            raise ValueError("lambda2 override must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")
        if self.minibatch_extent < 1:
            raise ValueError("minibatch_extent must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.outlier_mode < 1:
            raise ValueError("outlier_mode must be >= 1")

    def with_overrides(self, **kwargs) -> "RunConfig":
        return replace(self, **kwargs)


def lambda2_from(config: RunConfig, minibatch_shape: Sequence[int]) -> float:
    """Sparsity weight from the ``alpha`` rule: ``alpha / sqrt(2 ln I_m)``.

    ``I_m`` is the largest extent of the minibatch; natural logarithm.
    """
    extents = tuple(int(s) for s in minibatch_shape)
    if not extents:
        raise ValueError("empty minibatch shape")
    i_m = max(extents)
    if i_m < 2:
        raise ValueError(f"largest extent must be >= 2 for the alpha rule, got {i_m}")
    return config.alpha / math.sqrt(2.0 * math.log(i_m))


def resolve_lambda2(config: RunConfig, minibatch_shape: Sequence[int]) -> float:
    """The effective sparsity weight: override if set, else the alpha rule."""
    if config.lambda2 is not None:
        return config.lambda2
    return lambda2_from(config, minibatch_shape)
