"""TQT1 binary tensor container and the dataset file built on it.

Layout (all little-endian):
    magic   4 bytes  b"TQT1"
    version u16
    count   u32
    entry*  count times:
        name_len u16, name utf-8,
        dtype    u8   (0=f32, 1=i32, 2=u8),
        rank     u8,
        dims     u32 * rank,
        payload  prod(dims) * dtype_size bytes, row-major

Float tensors are stored as f32; loading returns the stored dtypes so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"TQT1"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("<u1")}
_CODES = {"f4": 0, "i4": 1, "u1": 2}


class FormatError(Exception):
    """Malformed container; `offset` is the byte position of the problem."""

    def __init__(self, offset: int, message: str):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


def _storage_array(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        return np.ascontiguousarray(arr, dtype="<f4")
    if arr.dtype.kind in "iu":
        if arr.dtype.itemsize == 1 and arr.dtype.kind == "u":
            return np.ascontiguousarray(arr, dtype="<u1")
        return np.ascontiguousarray(arr, dtype="<i4")
    if arr.dtype.kind == "b":
        return np.ascontiguousarray(arr, dtype="<u1")
    raise FormatError(0, f"unsupported dtype {arr.dtype}")


def dumps(entries: dict) -> bytes:
    """Serialize a name->array mapping (insertion order preserved)."""
    parts = [struct.pack("<4sHI", MAGIC, VERSION, len(entries))]
    seen = set()
    for name, arr in entries.items():
        if name in seen:
            raise FormatError(0, f"duplicate entry name {name!r}")
        seen.add(name)
        data = _storage_array(arr)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<BB", _CODES[data.dtype.str[1:]], data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(data.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict:
    """Parse a container; raises FormatError with the byte offset on damage."""
    if len(blob) < 10:
        raise FormatError(0, "truncated header")
    magic, version, count = struct.unpack_from("<4sHI", blob, 0)
    if magic != MAGIC:
        raise FormatError(0, f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(4, f"unsupported version {version}")
    off = 10
    out = {}
    for _ in range(count):
        if off + 2 > len(blob):
            raise FormatError(off, "truncated entry name length")
        (name_len,) = struct.unpack_from("<H", blob, off)
        off += 2
        if off + name_len > len(blob):
            raise FormatError(off, "truncated entry name")
        name = blob[off : off + name_len].decode("utf-8")
        off += name_len
        if off + 2 > len(blob):
            raise FormatError(off, "truncated entry header")
        dtype_code, rank = struct.unpack_from("<BB", blob, off)
        if dtype_code not in _DTYPES:
            raise FormatError(off, f"unknown dtype code {dtype_code}")
        off += 2
        if off + 4 * rank > len(blob):
            raise FormatError(off, "truncated dims")
        dims = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        dtype = _DTYPES[dtype_code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        if rank == 0:
            dims = ()
        if off + nbytes > len(blob):
            raise FormatError(off, f"truncated payload for {name!r} ({nbytes} bytes expected)")
        arr = np.frombuffer(blob[off : off + nbytes], dtype=dtype).reshape(dims).copy()
        off += nbytes
        if name in out:
            raise FormatError(off, f"duplicate entry name {name!r}")
        out[name] = arr
    if off != len(blob):
        raise FormatError(off, f"{len(blob) - off} trailing bytes")
    return out


def save(path, entries: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(entries))


def load(path) -> dict:
    with open(path, "rb") as fh:
        return loads(fh.read())


# -- weights & datasets -------------------------------------------------------

def save_weights(params: dict, path) -> None:
    """Write a parameter set (floats stored as f32)."""
    save(path, params)


def load_weights(path) -> dict:
    return load(path)


def save_dataset(path, inputs: np.ndarray, labels=None) -> None:
    entries = {"inputs": np.asarray(inputs, dtype=np.float32)}
    if labels is not None:
        entries["labels"] = np.asarray(labels, dtype=np.int32)
    save(path, entries)


def load_dataset(path, limit: int | None = None):
    """Load (inputs, labels); labels is None for unlabeled calibration sets.

    `limit` truncates deterministically from the front; limit=0 is an empty
    dataset.
    """
    entries = load(path)
    if "inputs" not in entries:
        raise FormatError(0, "dataset is missing the 'inputs' entry")
    inputs = entries["inputs"].astype(np.float64)
    labels = entries.get("labels")
    if labels is not None and len(labels) != len(inputs):
        raise FormatError(0, f"entry count mismatch: {len(inputs)} inputs vs {len(labels)} labels")
    if limit is not None:
        inputs = inputs[:limit]
        labels = labels[:limit] if labels is not None else None
    return inputs, (None if labels is None else labels.astype(np.int64))
