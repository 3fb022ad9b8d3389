"""
Checkpoint files and CSV tables of a run directory.

Checkpoint layout (little endian): 8-byte magic b"BLABCKPT", uint32 version,
uint32 reserved, then one record per state: <d time, <q n_points,
<d half_length, u1 and u2 as n_points <f8 each. A trajectory is a file with
several records.
"""

import csv
import logging
import struct
import threading
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core.grid import FieldState, Grid
from .exceptions import CheckpointCorruptionError, CheckpointFormatError, ContractViolationError

logger = logging.getLogger(__name__)

MAGIC = b"BLABCKPT"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII")
_RECORD = struct.Struct("<dqd")

csv_lock = threading.Lock()


def encode_states(states: Sequence[FieldState]) -> bytes:
    chunks = [_HEADER.pack(MAGIC, FORMAT_VERSION, 0)]
    for state in states:
        chunks.append(_RECORD.pack(state.time, state.grid.n_points, state.grid.half_length))
        chunks.append(state.u1.astype("<f8").tobytes())
        chunks.append(state.u2.astype("<f8").tobytes())
    return b"".join(chunks)


def decode_states(blob: bytes) -> list[FieldState]:
    if len(blob) < _HEADER.size:
        raise CheckpointCorruptionError(f"checkpoint is {len(blob)} bytes, shorter than its header")
    magic, version, _ = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError("not a checkpoint file", MAGIC, magic)
    if version != FORMAT_VERSION:
        raise CheckpointFormatError("unsupported checkpoint version", FORMAT_VERSION, version)
    offset = _HEADER.size
    states = []
    while offset < len(blob):
        if offset + _RECORD.size > len(blob):
            raise CheckpointCorruptionError(f"truncated record header at byte {offset}")
        time, n_points, half_length = _RECORD.unpack_from(blob, offset)
        offset += _RECORD.size
        if n_points <= 0:
            raise CheckpointCorruptionError(f"record at byte {offset} has n_points={n_points}")
        payload = 16 * n_points
        if offset + payload > len(blob):
            raise CheckpointCorruptionError(
                f"truncated record at t={time}: need {payload} bytes, {len(blob) - offset} left"
            )
        try:
            grid = Grid(half_length, int(n_points))
        except ContractViolationError as e:
            raise CheckpointCorruptionError(f"record at t={time} has an invalid grid: {e}") from e
        fields = np.frombuffer(blob, dtype="<f8", count=2 * n_points, offset=offset).astype(float)
        offset += payload
        states.append(FieldState(grid, fields[:n_points], fields[n_points:], time))
    if not states:
        raise CheckpointCorruptionError("checkpoint holds a header but no state")
    return states


def save_checkpoint(path: str | Path, states: FieldState | Sequence[FieldState]) -> Path:
    path = Path(path)
    if isinstance(states, FieldState):
        states = [states]
    path.parent.mkdir(parents=True, exist_ok=True)
    # write-then-rename keeps readers from seeing a half-written file
    partial = path.with_suffix(path.suffix + ".part")
    partial.write_bytes(encode_states(states))
    partial.replace(path)
    logger.debug(f"Wrote {len(states)} state(s) to {path}")
    return path


def load_trajectory(path: str | Path) -> list[FieldState]:
    path = Path(path)
    return decode_states(path.read_bytes())


def load_checkpoint(path: str | Path) -> FieldState:
    """Single state (the last record of a trajectory file)."""
    return load_trajectory(path)[-1]


def write_rows(path: str | Path, rows: Iterable[dict], columns: Sequence[str] | None = None) -> Path:
    """Writes dict rows with a fixed header; columns default to the first row's keys."""
    path = Path(path)
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    path.parent.mkdir(parents=True, exist_ok=True)
    with csv_lock, open(path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    logger.debug(f"Wrote {len(rows)} rows to {path}")
    return path


def append_row(path: str | Path, row: dict, columns: Sequence[str]):
    path = Path(path)
    with csv_lock:
        path.parent.mkdir(parents=True, exist_ok=True)
        exists = path.is_file()
        with open(path, "a", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(columns), extrasaction="ignore")
            if not exists:
                writer.writeheader()
            writer.writerow(row)


def write_report(path: str | Path, lines: Iterable[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path
