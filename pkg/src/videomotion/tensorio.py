"""Single-file binary container: JSON header + named little-endian arrays.

Used for body files, checkpoints, rendered clips and dataset blocks so that
every artifact is self-describing and diffable with one format.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"VMTF\x01\x00"

_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "int64": "<i8",
    "int32": "<i4",
    "uint8": "|u1",
}


class FormatError(ValueError):
    """Raised when a binary artifact is corrupt or not in the expected format."""


def _dtype_name(arr: np.ndarray) -> str:
    for name, code in _DTYPES.items():
        if arr.dtype == np.dtype(code).newbyteorder("="):
            return name
    raise FormatError(f"unsupported dtype {arr.dtype}")


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus a JSON metadata dict to a single binary file."""
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        dtype = _dtype_name(arr)
        blob = arr.astype(_DTYPES[dtype]).tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": dtype,
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_tensors(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a tensor file back; returns (tensors, meta).

    Raises FormatError on bad magic, malformed header, or truncated data.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    body_start = len(MAGIC) + 8 + header_len
    if len(raw) < body_start:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[len(MAGIC) + 8 : body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start = body_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(raw):
            raise FormatError(f"{path}: truncated data for tensor {entry['name']!r}")
        arr = np.frombuffer(raw[start:end], dtype=_DTYPES[entry["dtype"]])
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header.get("meta", {})
