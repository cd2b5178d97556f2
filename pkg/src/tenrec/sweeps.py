"""Experiment sweeps over synthetic streams, with table and JSON outputs."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import RunConfig
from .engine import init_state, process_minibatch
from .metrics import DEFAULT_BURN_IN, EvalReport, f1_outliers, relative_error
from .synth import SynthSpec, gen_stream

__all__ = ["SWEEP_KINDS", "SweepRow", "evaluate_stream", "run_sweep",
           "write_table", "write_json"]

SWEEP_KINDS = (
    "size",
    "corruption_ratio",
    "corruption_magnitude",
    "observation_ratio",
    "convergence",
)


def evaluate_stream(
    spec: SynthSpec, config: RunConfig, burn_in: int = DEFAULT_BURN_IN
) -> EvalReport:
    """Generate one stream, run the engine over it, score the recovery.

    Wall times cover engine work only (generation excluded); the peak state
    size is recorded to back the constant-memory claim.
    """
    state = init_state(spec.minibatch_shape, config)
    x_hats, truths, flags = [], [], []
    losses, wall_ms = [], []
    peak_bytes = state.state_bytes()
    for observed, mask, truth in gen_stream(spec):
        start = time.perf_counter()
        out = process_minibatch(state, observed, mask, config)
        wall_ms.append(1e3 * (time.perf_counter() - start))
        x_hats.append(out.x_hat)
        flags.append(out.outlier_fibers)
        losses.append(out.loss)
        truths.append(truth)
        peak_bytes = max(peak_bytes, state.state_bytes())
    report = EvalReport(loss_trace=losses, wall_ms=wall_ms, state_bytes=peak_bytes)
    if len(x_hats) > burn_in:
        report.relative_error = relative_error(x_hats, truths, flags, burn_in)
        report.precision, report.recall, report.f1 = f1_outliers(flags, truths, burn_in)
    return report


@dataclass
class SweepRow:
    """Aggregated metrics at one grid point."""

    value: float
    reports: list[EvalReport] = field(default_factory=list)

    def _values(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.reports if getattr(r, name) is not None]

    def mean(self, name: str) -> float | None:
        vals = self._values(name)
        return float(np.mean(vals)) if vals else None

    def min(self, name: str) -> float | None:
        vals = self._values(name)
        return float(np.min(vals)) if vals else None

    def max(self, name: str) -> float | None:
        vals = self._values(name)
        return float(np.max(vals)) if vals else None

    def mean_wall_ms(self) -> float:
        return float(np.mean([np.mean(r.wall_ms) for r in self.reports]))


def _trial_seed(base_seed: int, point: int, trial: int) -> int:
    seq = np.random.SeedSequence(entropy=(base_seed, point, trial))
    return int(seq.generate_state(1)[0])


def _sweep_point(
    kind: str, value: float, base: SynthSpec, config: RunConfig, seed: int
) -> tuple[SynthSpec, RunConfig]:
    if kind == "size":
        extent = int(round(value))
        core = max(1, int(round(0.1 * extent)))
        spec = replace(
            base,
            minibatch_shape=(extent,) * len(base.minibatch_shape),
            core_dims=(core,) * len(base.core_dims),
            seed=seed,
        )
        cfg = config.with_overrides(target_rank=core, seed=seed)
    elif kind == "corruption_ratio":
        spec = replace(base, corruption_ratio=float(value), seed=seed)
        cfg = config.with_overrides(seed=seed)
    elif kind == "corruption_magnitude":
        spec = replace(base, corruption_magnitude=float(value), seed=seed)
        cfg = config.with_overrides(seed=seed)
    elif kind == "observation_ratio":
        spec = replace(base, observation_ratio=float(value), seed=seed)
        cfg = config.with_overrides(seed=seed)
    elif kind == "convergence":
        extent = int(round(value))
        shape = base.minibatch_shape[:-1] + (extent,)
        core = base.core_dims[:-1] + (min(base.core_dims[-1], extent),)
        spec = replace(base, minibatch_shape=shape, core_dims=core, seed=seed)
        cfg = config.with_overrides(minibatch_extent=extent, seed=seed)
    else:
        raise ValueError(f"unknown sweep kind {kind!r}; use one of {SWEEP_KINDS}")
    return spec, cfg


def run_sweep(
    kind: str,
    grid: Sequence[float],
    base: SynthSpec,
    config: RunConfig,
    trials: int = 5,
    burn_in: int = DEFAULT_BURN_IN,
) -> list[SweepRow]:
    """One :class:`SweepRow` per grid point, averaged over ``trials`` runs.

    Every (point, trial) pair gets its own seed derived from the base seed,
    so rows are independent and the whole sweep is reproducible. Engine
    failures at one point are recorded and do not abort the sweep.
    """
    if not grid:
        raise ValueError("sweep grid is empty")
    rows = []
    for point, value in enumerate(grid):
        row = SweepRow(value=float(value))
        for trial in range(trials):
            seed = _trial_seed(base.seed, point, trial)
            spec, cfg = _sweep_point(kind, value, base, config, seed)
            try:
                row.reports.append(evaluate_stream(spec, cfg, burn_in))
            except Exception as exc:  # noqa: BLE001 - row-level isolation
                row.reports.append(EvalReport(loss_trace=[], wall_ms=[]))
                print(f"sweep point {value} trial {trial} failed: {exc}")
        rows.append(row)
    return rows


_TABLE_FIELDS = ("relative_error", "precision", "recall", "f1")


def write_table(rows: Sequence[SweepRow], path: str | Path) -> None:
    """Tab-separated summary: one line per grid point."""
    header = ["value"]
    for name in _TABLE_FIELDS:
        header += [f"{name}_mean", f"{name}_min", f"{name}_max"]
    header.append("wall_ms_mean")
    lines = ["\t".join(header)]
    for row in rows:
        cells = [f"{row.value:g}"]
        for name in _TABLE_FIELDS:
            for agg in (row.mean, row.min, row.max):
                v = agg(name)
                cells.append("" if v is None else f"{v:.6f}")
        cells.append(f"{row.mean_wall_ms():.3f}")
        lines.append("\t".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_json(
    kind: str,
    rows: Sequence[SweepRow],
    base: SynthSpec,
    config: RunConfig,
    path: str | Path,
) -> None:
    """Full machine-readable record: spec, config, per-trial metrics, timing."""
    doc = {
        "kind": kind,
        "base_spec": _jsonable(asdict(base)),
        "config": _jsonable(asdict(config)),
        "rows": [
            {
                "value": row.value,
                "mean": {name: row.mean(name) for name in _TABLE_FIELDS},
                "min": {name: row.min(name) for name in _TABLE_FIELDS},
                "max": {name: row.max(name) for name in _TABLE_FIELDS},
                "wall_ms_mean": row.mean_wall_ms() if row.reports else None,
                "trials": [
                    {
                        "relative_error": r.relative_error,
                        "precision": r.precision,
                        "recall": r.recall,
                        "f1": r.f1,
                        "loss_trace": r.loss_trace,
                        "wall_ms": r.wall_ms,
                        "state_bytes": r.state_bytes,
                    }
                    for r in row.reports
                ],
            }
            for row in rows
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj
