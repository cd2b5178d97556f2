"""CSV sensor ingestion, degradation protocol, streaming runs, and export.

A frame is a (sensors x 24 hours x days) tensor with an observation mask.
Days slice into minibatches along the last mode; the engine's fiber flags map
back to (hour, date) or (sensor, date) coordinates depending on the outlier
mode.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import save_state
from .config import RunConfig
from .engine import DictionaryState, MinibatchOutput, init_state, process_minibatch
from .metrics import DEFAULT_BURN_IN, EvalReport, f1_outliers, relative_error
from .synth import GroundTruth, gen_orthobasis
from .tensor import (
    fiber_column_index,
    fiber_count,
    fiber_multi_index,
    fold,
    mode_n_product,
    unfold,
)

__all__ = [
    "SchemaError",
    "CsvSchema",
    "SensorSeries",
    "TensorFrame",
    "IngestResult",
    "OutlierEntry",
    "RunResult",
    "ingest_csv",
    "degrade",
    "run",
    "export",
    "synthetic_temperature_frame",
]

HOURS_PER_DAY = 24


class SchemaError(ValueError):
    """Input file does not carry the expected columns."""


@dataclass(frozen=True)
class CsvSchema:
    sensor_col: str = "sensor_id"
    time_col: str = "timestamp"
    value_col: str = "value"


@dataclass
class SensorSeries:
    """One sensor's hour-resolution readings (UTC, at most one per hour)."""

    sensor_id: str
    readings: dict[datetime, float] = field(default_factory=dict)


@dataclass
class TensorFrame:
    """Sensor data arranged as (sensors x 24 x days) with an observation mask."""

    sensor_index: list[str]
    day_index: list[date]
    tensor: np.ndarray
    mask: np.ndarray

    def __post_init__(self) -> None:
        expected = (len(self.sensor_index), HOURS_PER_DAY, len(self.day_index))
        if tuple(self.tensor.shape) != expected:
            raise ValueError(f"tensor shape {self.tensor.shape} != {expected}")
        if tuple(self.mask.shape) != expected:
            raise ValueError(f"mask shape {self.mask.shape} != {expected}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.tensor.shape


@dataclass
class IngestResult:
    frame: TensorFrame
    rejects: list[tuple[int, str]]
    accepted_rows: int
    total_rows: int


@dataclass
class OutlierEntry:
    """One flagged fiber, in sensor-network coordinates.

    ``sensor_id`` identifies mode-2 fibers, ``hour`` mode-1 fibers; the one
    that does not apply is None. ``fiber_norm`` is the outlier column norm.
    """

    sensor_id: str | None
    hour: int | None
    date: date
    fiber_norm: float
    minibatch: int


@dataclass
class RunResult:
    cleaned: TensorFrame
    outliers: list[OutlierEntry]
    report: EvalReport
    state: DictionaryState
    sources: np.ndarray  # uint8 per cell: 0 observed, 1 imputed, 2 corrected
    outputs: list[MinibatchOutput]


def _parse_timestamp(raw: str) -> datetime:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.astimezone(timezone.utc).replace(minute=0, second=0, microsecond=0)


_AGGREGATIONS = ("mean", "median", "first")


def ingest_csv(
    path: str | Path,
    schema: CsvSchema = CsvSchema(),
    aggregation: str = "mean",
) -> IngestResult:
    """Read hourly sensor rows into a frame; bad rows go to a rejects list.

    Rows are grouped by (sensor, UTC hour); duplicates are combined by the
    chosen aggregation. Sensors come out sorted lexicographically and days
    chronologically. Every input row is either accepted into exactly one
    tensor cell or rejected with a reason.
    """
    if aggregation not in _AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {_AGGREGATIONS}")
    path = Path(path)
    cells: dict[tuple[str, datetime], list[float]] = {}
    rejects: list[tuple[int, str]] = []
    total = 0
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [
            c
            for c in (schema.sensor_col, schema.time_col, schema.value_col)
            if c not in header
        ]
        if missing:
            raise SchemaError(
                f"missing columns {missing}; file has {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            total += 1
            sensor = (row.get(schema.sensor_col) or "").strip()
            if not sensor:
                rejects.append((line_no, "empty sensor id"))
                continue
            try:
                stamp = _parse_timestamp(row.get(schema.time_col) or "")
            except ValueError:
                rejects.append((line_no, f"unparsable timestamp {row.get(schema.time_col)!r}"))
                continue
            try:
                value = float(row.get(schema.value_col) or "")
            except ValueError:
                rejects.append((line_no, f"non-numeric value {row.get(schema.value_col)!r}"))
                continue
            if not math.isfinite(value):
                rejects.append((line_no, f"non-finite value {value!r}"))
                continue
            cells.setdefault((sensor, stamp), []).append(value)

    sensors = sorted({sensor for sensor, _ in cells})
    days = sorted({stamp.date() for _, stamp in cells})
    tensor = np.zeros((len(sensors), HOURS_PER_DAY, len(days)))
    mask = np.zeros(tensor.shape, dtype=bool)
    sensor_pos = {s: i for i, s in enumerate(sensors)}
    day_pos = {d: i for i, d in enumerate(days)}
    for (sensor, stamp), values in cells.items():
        if aggregation == "mean":
            value = float(np.mean(values))
        elif aggregation == "median":
            value = float(np.median(values))
        else:
            value = values[0]
        i = sensor_pos[sensor]
        j = stamp.hour
        k = day_pos[stamp.date()]
        tensor[i, j, k] = value
        mask[i, j, k] = True
    frame = TensorFrame(sensors, days, tensor, mask)
    accepted = total - len(rejects)
    return IngestResult(frame, rejects, accepted, total)


def degrade(
    frame: TensorFrame,
    mask_fraction: float,
    fiber_fraction: float,
    magnitude: float,
    seed: int = 0,
    fiber_mode: int = 1,
) -> tuple[TensorFrame, GroundTruth]:
    """Hide entries and replace whole fibers with uniform noise, keeping truth.

    Corrupted fibers become i.i.d. uniform(-magnitude, magnitude) readings and
    the returned clean reference is zeroed there, so recovery metrics treat
    them exactly like the synthetic generator does. Entries are hidden
    independently with probability ``mask_fraction``. ``fiber_mode`` must be
    1 (hour-day fibers across sensors) or 2 (sensor-day fibers across hours).
    """
    if not 0.0 <= mask_fraction <= 1.0:
        raise ValueError("mask_fraction must be in [0, 1]")
    if not 0.0 <= fiber_fraction <= 1.0:
        raise ValueError("fiber_fraction must be in [0, 1]")
    if magnitude <= 0.0:
        raise ValueError("magnitude must be positive")
    if fiber_mode not in (1, 2):
        raise ValueError("fiber_mode must be 1 or 2 (fibers must not span days)")
    if not frame.mask.all():
        raise ValueError("degrade needs a complete frame for ground-truth bookkeeping")

    shape = frame.shape
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    n_fibers = fiber_count(shape, fiber_mode)
    n_corrupt = int(round(fiber_fraction * n_fibers))
    corrupt = rng.choice(n_fibers, size=n_corrupt, replace=False)

    clean_mat = unfold(frame.tensor, fiber_mode)
    outlier_mat = np.zeros_like(clean_mat)
    if n_corrupt:
        cols = np.sort(corrupt)
        noise = rng.uniform(-magnitude, magnitude, size=(clean_mat.shape[0], len(cols)))
        outlier_mat[:, cols] = noise
        clean_mat[:, cols] = 0.0
    clean = fold(clean_mat, fiber_mode, shape)
    outliers = fold(outlier_mat, fiber_mode, shape)

    observed = clean + outliers
    if mask_fraction > 0.0:
        mask = rng.random(shape) >= mask_fraction
        if not mask.any():
            mask.flat[int(rng.integers(observed.size))] = True
        observed = np.where(mask, observed, 0.0)
    else:
        mask = np.ones(shape, dtype=bool)

    degraded = TensorFrame(
        list(frame.sensor_index), list(frame.day_index), observed, mask
    )
    truth = GroundTruth(clean, outliers, mask, frozenset(int(j) for j in corrupt))
    return degraded, truth


def _slice_truth(
    truth: GroundTruth,
    frame_shape: tuple[int, int, int],
    minibatch_days: int,
    n_minibatches: int,
    fiber_mode: int,
) -> list[GroundTruth]:
    """Split a frame-level truth into per-minibatch truths.

    Frame-level fiber indices are remapped: the trailing coordinate of a
    fiber's multi-index is the day, which determines the minibatch and the
    local column index.
    """
    mb_shape = frame_shape[:2] + (minibatch_days,)
    per_minibatch: list[set[int]] = [set() for _ in range(n_minibatches)]
    for col in truth.corrupt_fibers:
        multi = fiber_multi_index(frame_shape, fiber_mode, col)
        other, day = multi[0], multi[1]
        t = day // minibatch_days
        if t >= n_minibatches:
            continue  # fiber fell in a dropped trailing window
        local = fiber_column_index(mb_shape, fiber_mode, (other, day % minibatch_days))
        per_minibatch[t].add(local)
    out = []
    for t in range(n_minibatches):
        sl = slice(t * minibatch_days, (t + 1) * minibatch_days)
        out.append(
            GroundTruth(
                clean=truth.clean[:, :, sl],
                outliers=truth.outliers[:, :, sl],
                mask=None if truth.mask is None else truth.mask[:, :, sl],
                corrupt_fibers=frozenset(per_minibatch[t]),
            )
        )
    return out


def _flag_to_entry(
    col: int,
    norm: float,
    minibatch: int,
    mb_shape: tuple[int, int, int],
    frame: TensorFrame,
    minibatch_days: int,
    outlier_mode: int,
) -> OutlierEntry:
    multi = fiber_multi_index(mb_shape, outlier_mode, col)
    other, local_day = multi[0], multi[1]
    day = frame.day_index[minibatch * minibatch_days + local_day]
    if outlier_mode == 1:
        return OutlierEntry(None, int(other), day, norm, minibatch)
    return OutlierEntry(frame.sensor_index[int(other)], None, day, norm, minibatch)


def run(
    frame: TensorFrame,
    config: RunConfig,
    minibatch_days: int = 1,
    truth: GroundTruth | None = None,
    burn_in: int = DEFAULT_BURN_IN,
    passthrough: bool = True,
    state: DictionaryState | None = None,
) -> RunResult:
    """Stream a frame through the engine day-window by day-window.

    The cleaned frame keeps observed raw values outside flagged fibers when
    ``passthrough`` is on, and takes the low-rank estimate for missing or
    corrected cells. Metrics are computed against ``truth`` when supplied,
    over the final epoch with the standard burn-in. A trailing window of days
    not filling a whole minibatch is dropped with a warning.
    """
    if minibatch_days < 1:
        raise ValueError("minibatch_days must be >= 1")
    if config.outlier_mode not in (1, 2):
        raise ValueError("frame runs support outlier_mode 1 or 2 only")
    n_days = len(frame.day_index)
    n_minibatches = n_days // minibatch_days
    if n_minibatches == 0:
        raise ValueError(f"frame has {n_days} days, fewer than one {minibatch_days}-day window")
    used_days = n_minibatches * minibatch_days
    if used_days < n_days:
        warnings.warn(
            f"dropping trailing {n_days - used_days} day(s) not filling a "
            f"{minibatch_days}-day minibatch",
            stacklevel=2,
        )

    mb_shape = frame.shape[:2] + (minibatch_days,)
    full_mask = bool(frame.mask.all())
    if state is None:
        state = init_state(mb_shape, config)
    elif state.minibatch_shape != mb_shape:
        raise ValueError(
            f"resumed state shape {state.minibatch_shape} does not match {mb_shape}"
        )

    outputs: list[MinibatchOutput] = []
    losses: list[float] = []
    wall_ms: list[float] = []
    for epoch in range(config.epochs):
        for t in range(n_minibatches):
            sl = slice(t * minibatch_days, (t + 1) * minibatch_days)
            b = frame.tensor[:, :, sl]
            mask = None if full_mask else frame.mask[:, :, sl]
            start = time.perf_counter()
            try:
                out = process_minibatch(state, b, mask, config)
            except Exception as exc:
                raise RuntimeError(
                    f"engine failed at epoch {epoch} minibatch {t}: {exc}"
                ) from exc
            wall_ms.append(1e3 * (time.perf_counter() - start))
            losses.append(out.loss)
            outputs.append(out)
    final = outputs[-n_minibatches:]

    x_all = np.concatenate([out.x_hat for out in final], axis=-1)
    obs = frame.mask[:, :, :used_days]
    raw = frame.tensor[:, :, :used_days]

    corrected = np.zeros_like(obs)
    entries: list[OutlierEntry] = []
    for t, out in enumerate(final):
        if not out.outlier_fibers:
            continue
        em = unfold(out.e_hat, config.outlier_mode)
        for col in sorted(out.outlier_fibers):
            entries.append(
                _flag_to_entry(
                    col,
                    float(np.linalg.norm(em[:, col])),
                    t,
                    mb_shape,
                    frame,
                    minibatch_days,
                    config.outlier_mode,
                )
            )
            other, local_day = fiber_multi_index(mb_shape, config.outlier_mode, col)
            day = t * minibatch_days + local_day
            if config.outlier_mode == 1:
                corrected[:, other, day] = True
            else:
                corrected[other, :, day] = True

    sources = np.zeros(obs.shape, dtype=np.uint8)
    sources[~obs] = 1
    sources[obs & corrected] = 2
    if passthrough:
        cleaned_tensor = np.where(sources == 0, raw, x_all)
    else:
        cleaned_tensor = x_all.copy()
    cleaned = TensorFrame(
        list(frame.sensor_index),
        list(frame.day_index[:used_days]),
        cleaned_tensor,
        np.ones(obs.shape, dtype=bool),
    )

    report = EvalReport(loss_trace=losses, wall_ms=wall_ms, state_bytes=state.state_bytes())
    if truth is not None and n_minibatches > burn_in:
        truths = _slice_truth(
            truth, frame.shape, minibatch_days, n_minibatches, config.outlier_mode
        )
        x_hats = [out.x_hat for out in final]
        flags = [out.outlier_fibers for out in final]
        report.relative_error = relative_error(
            x_hats, truths, flags, burn_in, config.outlier_mode
        )
        report.precision, report.recall, report.f1 = f1_outliers(flags, truths, burn_in)
    return RunResult(cleaned, entries, report, state, sources, outputs)


_SOURCE_LABELS = {0: "observed", 1: "imputed", 2: "corrected"}


def export(
    frame: TensorFrame,
    outliers: Sequence[OutlierEntry],
    out_dir: str | Path,
    report: EvalReport | None = None,
    state: DictionaryState | None = None,
    sources: np.ndarray | None = None,
    schema: CsvSchema = CsvSchema(),
) -> dict[str, Path]:
    """Write the cleaned CSV, outlier report JSON, metrics JSON, checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    cleaned_path = out_dir / "cleaned.csv"
    with cleaned_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.sensor_col, schema.time_col, schema.value_col, "source"])
        for k, day in enumerate(frame.day_index):
            base = datetime(day.year, day.month, day.day, tzinfo=timezone.utc)
            for j in range(HOURS_PER_DAY):
                stamp = (base + timedelta(hours=j)).isoformat()
                for i, sensor in enumerate(frame.sensor_index):
                    label = _SOURCE_LABELS[int(sources[i, j, k])] if sources is not None else "observed"
                    writer.writerow([sensor, stamp, repr(float(frame.tensor[i, j, k])), label])
    paths["cleaned"] = cleaned_path

    report_path = out_dir / "outliers.json"
    report_path.write_text(
        json.dumps(
            [
                {
                    "sensor_id": e.sensor_id,
                    "hour": e.hour,
                    "date": e.date.isoformat(),
                    "fiber_norm": e.fiber_norm,
                    "minibatch": e.minibatch,
                }
                for e in outliers
            ],
            indent=2,
        )
        + "\n"
    )
    paths["outliers"] = report_path

    if report is not None:
        metrics: dict[str, object] = {}
        for name in ("relative_error", "precision", "recall", "f1"):
            value = getattr(report, name)
            if value is not None:
                metrics[name] = value
        metrics["per_minibatch_loss"] = report.loss_trace
        metrics["wall_ms"] = report.wall_ms
        metrics_path = out_dir / "metrics.json"
        metrics_path.write_text(json.dumps(metrics, indent=2) + "\n")
        paths["metrics"] = metrics_path

    if state is not None:
        ckpt_path = out_dir / "state.ckpt"
        save_state(state, ckpt_path)
        paths["checkpoint"] = ckpt_path
    return paths


def synthetic_temperature_frame(
    n_sensors: int = 37,
    n_days: int = 364,
    core: tuple[int, int, int] = (20, 20, 20),
    seed: int = 0,
    start: date = date(2019, 1, 1),
    baseline: float = 35.0,
    season_scale: float = 12.0,
    diurnal_scale: float = 5.0,
    structure_scale: float = 3.0,
    spectrum_decay: float = 0.7,
) -> TensorFrame:
    """Temperature-like complete frame: low-rank structure plus seasonal drift.

    A random core with geometrically decaying strength against orthonormal
    factors provides the multilinear structure; annual and diurnal cycles with
    per-sensor amplitudes supply the drift. The baseline keeps fiber norms
    well away from zero year-round, which is what separates a dead sensor's
    noise from plausible readings.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    shape = (n_sensors, HOURS_PER_DAY, n_days)
    factors = [gen_orthobasis(extent, c, rng) for extent, c in zip(shape, core)]
    g = rng.standard_normal(core)
    for axis, c in enumerate(core):
        decay = spectrum_decay ** np.arange(c)
        g *= decay.reshape([-1 if a == axis else 1 for a in range(3)])
    structure = g
    for i, factor in enumerate(factors, start=1):
        structure = mode_n_product(structure, factor, i)
    structure *= structure_scale / structure.std()

    days = np.arange(n_days)
    hours = np.arange(HOURS_PER_DAY)
    season = -np.cos(2.0 * np.pi * (days - 15.0) / 365.25)
    diurnal = np.sin(2.0 * np.pi * (hours - 8.0) / 24.0)
    season_amp = season_scale * (1.0 + 0.15 * rng.standard_normal(n_sensors))
    diurnal_amp = diurnal_scale * (1.0 + 0.2 * rng.standard_normal(n_sensors))
    offset = baseline + 2.0 * rng.standard_normal(n_sensors)

    tensor = (
        offset[:, None, None]
        + season_amp[:, None, None] * season[None, None, :]
        + diurnal_amp[:, None, None] * diurnal[None, :, None]
        + structure
    )
    day_index = [start + timedelta(days=int(d)) for d in range(n_days)]
    sensor_index = [f"S{i:03d}" for i in range(n_sensors)]
    return TensorFrame(sensor_index, day_index, tensor, np.ones(shape, dtype=bool))
