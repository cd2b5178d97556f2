"""Binary checkpoints for dictionary state.

Layout (little-endian): 8-byte magic, u32 format version, u32 order N,
u64 rank, u64 minibatch count, N x u64 minibatch extents, then per mode the
dictionary (I_i x r), Gram (r x r) and cross (I_i x r) matrices as row-major
float64. The header is self-describing, so the payload length is implied.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .engine import DictionaryState

__all__ = ["CheckpointError", "save_state", "load_state", "serialized_size"]

MAGIC = b"TENRECKP"
VERSION = 1
_HEAD = struct.Struct("<8sII")
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def _matrix_bytes(m: np.ndarray) -> bytes:
    return np.ascontiguousarray(m, dtype="<f8").tobytes()


def serialized_size(state: DictionaryState) -> int:
    """Exact on-disk size in bytes; depends only on shapes and rank."""
    n = state.n_modes
    r = state.rank
    payload = sum(
        8 * (extent * r + r * r + extent * r) for extent in state.minibatch_shape
    )
    return _HEAD.size + 16 + 8 * n + payload


def save_state(state: DictionaryState, path: str | Path) -> None:
    path = Path(path)
    parts = [_HEAD.pack(MAGIC, VERSION, state.n_modes)]
    parts.append(_U64.pack(state.rank))
    parts.append(_U64.pack(state.minibatch_count))
    for extent in state.minibatch_shape:
        parts.append(_U64.pack(extent))
    for lmat, amat, dmat in zip(state.basis, state.gram, state.cross):
        parts.append(_matrix_bytes(lmat))
        parts.append(_matrix_bytes(amat))
        parts.append(_matrix_bytes(dmat))
    path.write_bytes(b"".join(parts))


def load_state(
    path: str | Path,
    expected_shape: tuple[int, ...] | None = None,
    expected_rank: int | None = None,
) -> DictionaryState:
    """Read a checkpoint back; any header mismatch is a :class:`CheckpointError`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise CheckpointError("checkpoint file truncated")
    magic, version, n = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = _HEAD.size
    try:
        rank = _U64.unpack_from(raw, offset)[0]
        count = _U64.unpack_from(raw, offset + 8)[0]
        offset += 16
        shape = tuple(
            _U64.unpack_from(raw, offset + 8 * i)[0] for i in range(n)
        )
        offset += 8 * n
        basis, gram, cross = [], [], []
        for extent in shape:
            for store, rows, cols in (
                (basis, extent, rank),
                (gram, rank, rank),
                (cross, extent, rank),
            ):
                nbytes = 8 * rows * cols
                block = raw[offset : offset + nbytes]
                if len(block) != nbytes:
                    raise CheckpointError("checkpoint file truncated")
                store.append(
                    np.frombuffer(block, dtype="<f8").astype(float).reshape(rows, cols)
                )
                offset += nbytes
    except struct.error as exc:
        raise CheckpointError("checkpoint file truncated") from exc
    if offset != len(raw):
        raise CheckpointError("trailing bytes in checkpoint file")
    if expected_shape is not None and tuple(expected_shape) != shape:
        raise CheckpointError(
            f"checkpoint shape {shape} does not match expected {tuple(expected_shape)}"
        )
    if expected_rank is not None and expected_rank != rank:
        raise CheckpointError(
            f"checkpoint rank {rank} does not match expected {expected_rank}"
        )
    state = DictionaryState(
        minibatch_shape=tuple(int(s) for s in shape),
        rank=int(rank),
        basis=basis,
        gram=gram,
        cross=cross,
        minibatch_count=int(count),
    )
    for mats in (state.basis, state.gram, state.cross):
        for m in mats:
            if not np.isfinite(m).all():
                raise CheckpointError("checkpoint contains non-finite values")
    return state
