"""Input readers: raw little-endian arrays with a JSON sidecar, and CSV series.

A raw array file <name> is accompanied by <name>.json holding
{"shape": [...], "dtype": "f32"|"f64"} (dtype defaults to "f32"). CSV files
carry (B, L, D) time-series: each row is one time step with D columns and the
file holds exactly B*L rows, batches stored consecutively.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import FormatError

_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def read_raw_array(path: str | Path) -> np.ndarray:
    """Load a raw little-endian float array described by its JSON sidecar."""
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise FormatError(f"missing shape sidecar {sidecar}")
    try:
        meta = json.loads(sidecar.read_text())
        shape = tuple(int(s) for s in meta["shape"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad sidecar {sidecar}: {e}") from None
    dtype = _DTYPES.get(meta.get("dtype", "f32"))
    if dtype is None:
        raise FormatError(f"sidecar dtype must be f32 or f64, got {meta.get('dtype')!r}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(
            f"{path} holds {len(raw)} bytes but shape {shape} needs {expected}"
        )
    return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def write_raw_array(path: str | Path, array: np.ndarray, dtype: str = "f32") -> None:
    """Write a raw array plus its JSON sidecar (the inverse of read_raw_array)."""
    path = Path(path)
    if dtype not in _DTYPES:
        raise FormatError(f"dtype must be f32 or f64, got {dtype!r}")
    arr = np.ascontiguousarray(array, dtype=_DTYPES[dtype])
    path.write_bytes(arr.tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps({"shape": list(arr.shape), "dtype": dtype}))


def read_timeseries_csv(path: str | Path, batch: int = 1) -> np.ndarray:
    """Load (B, L, D) from CSV: rows are time steps, file holds B*L rows."""
    if batch < 1:
        raise FormatError(f"batch must be positive, got {batch}")
    rows = []
    with open(path, newline="") as fh:
        for line in csv.reader(fh):
            if not line:
                continue
            try:
                rows.append([float(v) for v in line])
            except ValueError as e:
                raise FormatError(f"{path}: non-numeric CSV value ({e})") from None
    if not rows:
        raise FormatError(f"{path} holds no data rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise FormatError(f"{path}: rows have inconsistent widths {sorted(widths)}")
    if len(rows) % batch != 0:
        raise FormatError(
            f"{path} holds {len(rows)} rows, not divisible into {batch} batch entries"
        )
    arr = np.asarray(rows, dtype=np.float64)
    return arr.reshape(batch, len(rows) // batch, arr.shape[1])
