"""Flat binary checkpoint container.

Layout (little-endian):
    magic   4 bytes  b"PFCK"
    version u32      format version (currently 1)
    hlen    u64      length of the UTF-8 JSON header
    header  hlen bytes  JSON object with model hyperparameters
    nblocks u64
    then per block:
        nlen  u64, name nlen bytes UTF-8
        rows  u64, cols u64
        data  rows*cols float64, row-major

1-D parameter blocks are stored with rows=1.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import ContractViolation

MAGIC = b"PFCK"
FORMAT_VERSION = 1


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write via temp file + rename so failures leave no partial file."""
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_checkpoint(path: str, header: dict, blocks: dict) -> None:
    """Serialize named float64 parameter blocks plus a JSON header."""
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<I", FORMAT_VERSION),
           struct.pack("<Q", len(hdr)), hdr,
           struct.pack("<Q", len(blocks))]
    for name, arr in blocks.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        if a.ndim == 1:
            rows, cols = 1, a.shape[0]
        elif a.ndim == 2:
            rows, cols = a.shape
        else:
            raise ContractViolation(f"block {name!r} must be 1-D or 2-D")
        nb = name.encode("utf-8")
        out.append(struct.pack("<Q", len(nb)))
        out.append(nb)
        out.append(struct.pack("<QQ", rows, cols))
        out.append(a.tobytes())
    atomic_write_bytes(path, b"".join(out))


def load_checkpoint(path: str):
    """Read a checkpoint; returns (header dict, blocks dict).

    2-D blocks come back (rows, cols); rows==1 blocks come back 1-D.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise ContractViolation(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise ContractViolation(f"{path}: unsupported format version {version}")
    off = 8
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    (nblocks,) = struct.unpack_from("<Q", raw, off)
    off += 8
    blocks = {}
    for _ in range(nblocks):
        (nlen,) = struct.unpack_from("<Q", raw, off)
        off += 8
        name = raw[off:off + nlen].decode("utf-8")
        off += nlen
        rows, cols = struct.unpack_from("<QQ", raw, off)
        off += 16
        n = rows * cols
        arr = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
        off += n * 8
        blocks[name] = arr if rows == 1 else arr.reshape(rows, cols)
    return header, blocks
