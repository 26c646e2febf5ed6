"""The URLKWT01 weight container: magic, JSON manifest, raw tensor payload.

File layout:

    bytes 0..7    magic b"URLKWT01"
    bytes 8..11   uint32 little-endian manifest byte length
    manifest      UTF-8 JSON {format_version, model_name, mode, tensors}
    payload       raw little-endian IEEE-754 data, tensors contiguous in
                  manifest order, no padding

Each manifest tensor entry is {name, shape, dtype: "f32"|"f64", byte_offset,
byte_length} with byte_offset relative to the payload start. The container is
lossless: export -> import round-trips every tensor bit for bit.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .model import ModelInstance, build_from_state, iter_state
from .tensor import Tensor4

MAGIC = b"URLKWT01"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype("<f4"): "f32", np.dtype("<f8"): "f64"}
_TAG_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def write_container(
    path: str | Path,
    tensors: Sequence[tuple[str, np.ndarray]],
    model_name: str = "",
    mode: str = "data",
) -> None:
    """Write named tensors; order in the file follows the given order."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        tag = _DTYPE_TAGS.get(le.dtype)
        if tag is None:
            raise FormatError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        raw = le.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": tag,
            "byte_offset": offset,
            "byte_length": len(raw),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({
        "format_version": FORMAT_VERSION,
        "model_name": model_name,
        "mode": mode,
        "tensors": entries,
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for raw in chunks:
            fh.write(raw)


def read_container(path: str | Path) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    """Read (manifest, [(name, array), ...]); truncated or malformed files raise FormatError."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4:
        raise FormatError(f"{path}: file too short to be a weight container")
    if blob[:len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:len(MAGIC)]!r}, expected {MAGIC!r}")
    (mlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    header_end = len(MAGIC) + 4 + mlen
    if len(blob) < header_end:
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(blob[len(MAGIC) + 4:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: manifest is not valid JSON ({e})") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format_version {manifest.get('format_version')!r}"
        )
    payload = blob[header_end:]
    tensors = []
    offset = 0
    for entry in manifest.get("tensors", []):
        try:
            name = entry["name"]
            shape = tuple(int(s) for s in entry["shape"])
            dtype = _TAG_DTYPES[entry["dtype"]]
            byte_offset = int(entry["byte_offset"])
            byte_length = int(entry["byte_length"])
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"{path}: malformed tensor entry ({e})") from None
        if byte_offset != offset:
            raise FormatError(
                f"{path}: tensor {name!r} at offset {byte_offset}, expected {offset} "
                "(tensors must be contiguous in manifest order)"
            )
        expected = int(np.prod(shape)) * dtype.itemsize
        if byte_length != expected:
            raise FormatError(
                f"{path}: tensor {name!r} declares {byte_length} bytes, shape needs {expected}"
            )
        if byte_offset + byte_length > len(payload):
            raise FormatError(f"{path}: truncated payload at tensor {name!r}")
        arr = np.frombuffer(payload, dtype=dtype, count=int(np.prod(shape)),
                            offset=byte_offset).reshape(shape)
        tensors.append((name, arr.astype(dtype.newbyteorder("="), copy=False)))
        offset += byte_length
    if offset != len(payload):
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes but manifest accounts for {offset}"
        )
    return manifest, tensors


def save_model(path: str | Path, model: ModelInstance) -> None:
    write_container(path, list(iter_state(model)), model_name=model.name, mode=model.mode)


def load_model(path: str | Path) -> ModelInstance:
    manifest, tensors = read_container(path)
    return build_from_state(
        manifest.get("model_name", ""), manifest.get("mode", ""), dict(tensors)
    )


def save_tensor(path: str | Path, name: str, value: Tensor4 | np.ndarray) -> None:
    """Store a single array (embedding map, model input, logits) as a container."""
    arr = value.data if isinstance(value, Tensor4) else np.asarray(value)
    write_container(path, [(name, arr)], model_name="", mode="data")


def load_tensor(path: str | Path) -> tuple[str, np.ndarray]:
    _, tensors = read_container(path)
    if len(tensors) != 1:
        raise FormatError(f"{path}: expected a single-tensor container, found {len(tensors)}")
    return tensors[0]
