"""Self-describing checkpoint container.

Layout: a versioned magic line, an 8-byte little-endian header length, a
JSON header (sorted keys), then raw little-endian tensor blobs in the order
listed by the header. Tensors are stored sorted by name and floats go
through Python's shortest-repr JSON encoding, so save -> load -> save is
byte-identical. Files with an unknown magic are rejected loudly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError

__all__ = ["save_checkpoint", "load_checkpoint", "MAGIC"]

MAGIC = b"LDR2HDR-CKPT-1\n"


def save_checkpoint(path, meta: dict, tensors: dict) -> None:
    """Write metadata plus named arrays; tensor order is sorted by name."""
    path = Path(path)
    names = sorted(tensors)
    arrays = {}
    listing = []
    for name in names:
        arr = np.ascontiguousarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        arrays[name] = arr
        listing.append([name, arr.dtype.str, list(arr.shape)])
    header = json.dumps({"meta": meta, "tensors": listing}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in names:
            f.write(arrays[name].tobytes())


def load_checkpoint(path):
    """Return (meta, {name: array}); raises ConfigurationError on bad magic."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ConfigurationError(
                f"{path}: not a compatible checkpoint (magic {magic[:16]!r}, expected {MAGIC!r})"
            )
        (hlen,) = struct.unpack("<Q", f.read(8))
        try:
            header = json.loads(f.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: corrupt checkpoint header") from exc
        tensors = {}
        for name, dtype, shape in header["tensors"]:
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            nbytes = count * np.dtype(dtype).itemsize
            blob = f.read(nbytes)
            if len(blob) != nbytes:
                raise FormatError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).copy()
    return header["meta"], tensors
