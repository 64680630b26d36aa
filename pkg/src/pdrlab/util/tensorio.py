"""PDRT tensor container and manifest JSON I/O.

Layout of a PDRT file:

    offset 0   b"PDRT"
    offset 4   u8 dtype code (0 = float32, 1 = float64)
    offset 5   u8 ndim
    offset 6   two zero bytes (header padded to 8)
    offset 8   ndim x u32 little-endian dims
    then       row-major little-endian payload
"""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

MAGIC = b"PDRT"

_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class DatasetError(OSError):
    """Dataset, checkpoint or tensor file could not be read or written."""

    def __init__(self, path: Path | str, cause: Any):
        self.path = Path(path)
        self.cause = cause
        super().__init__(f"{self.path}: {cause}")


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype not in _CODES:
        raise ValueError(f"PDRT stores float32 or float64 only (got: {array.dtype})")
    if array.ndim > 255:
        raise ValueError(f"PDRT supports at most 255 dims (got: {array.ndim})")
    header = MAGIC + struct.pack("<BBxx", _CODES[array.dtype], array.ndim)
    dims = struct.pack(f"<{array.ndim}I", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[_CODES[array.dtype]]).tobytes()
    return header + dims + payload


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise ValueError("not a PDRT container (bad magic)")
    code, ndim = struct.unpack_from("<BB", blob, 4)
    if code not in _DTYPES:
        raise ValueError(f"unknown PDRT dtype code {code}")
    end = 8 + 4 * ndim
    if len(blob) < end:
        raise ValueError("truncated PDRT header")
    shape = struct.unpack_from(f"<{ndim}I", blob, 8)
    dtype = _DTYPES[code]
    count = int(np.prod(shape)) if ndim else 1
    if len(blob) != end + count * dtype.itemsize:
        raise ValueError(
            f"PDRT payload holds {len(blob) - end} bytes, shape {shape} needs {count * dtype.itemsize}"
        )
    data = np.frombuffer(blob, dtype=dtype, offset=end, count=count)
    return data.reshape(shape).astype(dtype.newbyteorder("="), copy=True)


def write_tensor(path: Path, array: np.ndarray) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_tensor(array))
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e


def read_tensor(path: Path) -> np.ndarray:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e
    try:
        return decode_tensor(blob)
    except ValueError as e:
        raise DatasetError(path, e) from e


def dumps_json(data: Any) -> str:
    """Canonical JSON: sorted keys, two-space indent, trailing newline."""
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def write_json(path: Path, data: Any) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps_json(data), encoding="utf-8")
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e


def read_json(path: Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError(path, e.strerror or e) from e
    except json.JSONDecodeError as e:
        raise DatasetError(path, f"invalid JSON ({e})") from e
