"""Binary channel datasets and CSV/JSON result files.

Channel dataset layout (all little-endian)::

    bytes 0..7    magic  b"AIRCH01\\0"
    bytes 8..27   uint32 version, num_samples, K, N_c, N_t
    then          float64 (re, im) pairs, index order [sample][k][n][t]
"""

from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from airmimo.errors import FormatError

__all__ = [
    "CHANNEL_MAGIC",
    "RESULT_COLUMNS",
    "ResultRow",
    "emit_results",
    "read_channels",
    "read_results_csv",
    "write_channels",
]

CHANNEL_MAGIC = b"AIRCH01\x00"
CHANNEL_VERSION = 1
_HEADER = struct.Struct("<8s5I")

RESULT_COLUMNS = (
    "scheme",
    "axis",
    "axis_value",
    "trial",
    "sum_rate_bps_hz",
    "min_user_rate_bps_hz",
    "mean_empirical_mse",
    "mean_analytical_mse",
    "elapsed_ms",
    "seed",
)


@dataclass(frozen=True)
class ResultRow:
    scheme: str
    axis: str
    axis_value: float
    trial: int
    sum_rate_bps_hz: float
    min_user_rate_bps_hz: float
    mean_empirical_mse: float
    mean_analytical_mse: float
    elapsed_ms: float
    seed: int


def write_channels(path, tensors: np.ndarray) -> int:
    """Write ``(num_samples, K, N_c, N_t)`` complex tensors; returns bytes written."""
    tensors = np.asarray(tensors, dtype=np.complex128)
    if tensors.ndim != 4 or tensors.shape[0] < 1:
        raise ValueError(f"expected (samples, K, N_c, N_t) tensor, got shape {tensors.shape}")
    header = _HEADER.pack(CHANNEL_MAGIC, CHANNEL_VERSION, *tensors.shape)
    payload = np.ascontiguousarray(tensors).astype("<c16", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    return len(header) + len(payload)


def read_channels(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError(f"{path}: file too short for channel header")
    magic, version, count, k, n_c, n_t = _HEADER.unpack_from(data)
    if magic != CHANNEL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CHANNEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + count * k * n_c * n_t * 16
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<c16", offset=_HEADER.size)
    return values.astype(np.complex128).reshape(count, k, n_c, n_t)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)  # shortest round-tripping form, <= 17 significant digits
    return str(value)


def _rows_to_csv(rows: Sequence[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, c)) for c in RESULT_COLUMNS])
    return buf.getvalue()


def emit_results(rows: Sequence[ResultRow], path, fmt: str = "csv", meta: Optional[dict] = None) -> None:
    """Write result rows as CSV (fixed column set) or JSON (``{"meta", "rows"}``)."""
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to write")
    if fmt == "csv":
        text = _rows_to_csv(rows)
    elif fmt == "json":
        text = json.dumps({"meta": meta or {}, "rows": [asdict(r) for r in rows]}, indent=2) + "\n"
    else:
        raise ValueError(f"unknown result format {fmt!r}")
    Path(path).write_text(text)


def read_results_csv(path) -> List[ResultRow]:
    types = {f.name: f.type for f in fields(ResultRow)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            conv = {}
            for name, raw in rec.items():
                t = types[name]
                conv[name] = float(raw) if t in (float, "float") else int(raw) if t in (int, "int") else raw
            out.append(ResultRow(**conv))
    return out
