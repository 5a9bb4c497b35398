"""DTEN1 tensor files and keyed containers.

A DTEN1 record is: magic ``DTEN``, u8 version (=1), u8 rank, rank little-endian
u32 dims, then prod(dims) little-endian IEEE-754 float32 values.

A container is a concatenation of records, each preceded by a u8 key length
and the ASCII key. Non-tensor payloads (config JSON) ride along as a record
whose floats are UTF-8 byte values, which round-trips exactly in float32.
"""

import io
import json
import struct

import numpy as np

from .errors import FormatError
from .util import atomic_write_bytes

MAGIC = b"DTEN"
VERSION = 1


def tensor_to_bytes(arr) -> bytes:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float32))
    if arr.ndim > 255:
        raise FormatError(f"rank {arr.ndim} exceeds the u8 rank field")
    head = MAGIC + struct.pack("<BB", VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + arr.astype("<f4").tobytes()


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def tensor_from_stream(fh) -> np.ndarray:
    head = _read_exact(fh, 6, "DTEN1 header")
    if head[:4] != MAGIC:
        raise FormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    version, rank = head[4], head[5]
    if version != VERSION:
        raise FormatError(f"unsupported DTEN version {version}")
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "dims"))
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(_read_exact(fh, 4 * count, "tensor payload"), dtype="<f4")
    return data.reshape(dims).astype(np.float32)


def write_tensor(path, arr) -> None:
    atomic_write_bytes(path, tensor_to_bytes(arr))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr = tensor_from_stream(fh)
        if fh.read(1):
            raise FormatError("trailing bytes after tensor payload")
    return arr


def container_to_bytes(records: dict) -> bytes:
    out = io.BytesIO()
    for key, arr in records.items():
        kb = key.encode("ascii")
        if not 1 <= len(kb) <= 255:
            raise FormatError(f"container key {key!r} must be 1..255 ASCII bytes")
        out.write(struct.pack("<B", len(kb)))
        out.write(kb)
        out.write(tensor_to_bytes(arr))
    return out.getvalue()


def container_from_bytes(payload: bytes) -> dict:
    fh = io.BytesIO(payload)
    records = {}
    while True:
        klen = fh.read(1)
        if not klen:
            break
        key = _read_exact(fh, klen[0], "container key").decode("ascii")
        if key in records:
            raise FormatError(f"duplicate container key {key!r}")
        records[key] = tensor_from_stream(fh)
    return records


def write_container(path, records: dict) -> None:
    atomic_write_bytes(path, container_to_bytes(records))


def read_container(path) -> dict:
    with open(path, "rb") as fh:
        return container_from_bytes(fh.read())


def json_to_record(obj) -> np.ndarray:
    """Encode a JSON-serializable object as a 1-D float tensor of byte values."""
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.float32)


def json_from_record(arr):
    raw = np.asarray(arr)
    if raw.ndim != 1:
        raise FormatError(f"JSON record must be 1-D, got shape {raw.shape}")
    vals = np.rint(raw).astype(np.int64)
    if (vals < 0).any() or (vals > 255).any():
        raise FormatError("JSON record holds values outside byte range")
    try:
        return json.loads(vals.astype(np.uint8).tobytes().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"JSON record does not decode: {exc}") from exc
