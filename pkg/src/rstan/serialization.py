"""On-disk formats: parameter checkpoints and single-tensor files.

Checkpoint (``.ckpt``)::

    RSTAN-CHECKPOINT 1\\n
    count <n>\\n
    <name> <shape>\\n        one line per tensor; shape "3x4x5", "scalar" for rank 0
    END\\n
    <payload>               float64 little-endian, row-major, tensors in header order

Tensor file (``.rtn``)::

    magic    8 bytes  b"RSTNTNSR"
    version  uint32 LE (currently 1)
    rank     uint64 LE
    dims     rank x uint64 LE
    payload  prod(dims) x float64 LE, row-major
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

CKPT_MAGIC = "RSTAN-CHECKPOINT"
CKPT_VERSION = 1
TENSOR_MAGIC = b"RSTNTNSR"
TENSOR_VERSION = 1
_LE_F64 = np.dtype("<f8")


def _atomic_write(path: Path, blob: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def save_checkpoint(path, params: dict) -> None:
    """Write ``{name: array}`` in insertion order."""
    path = Path(path)
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}", f"count {len(params)}"]
    payload = []
    for name, arr in params.items():
        arr = np.asarray(arr, dtype=np.float64)
        if not name or any(ch.isspace() for ch in name):
            raise FormatError(f"parameter name {name!r} must be non-empty without whitespace")
        shape = "x".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {shape}")
        payload.append(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("ascii")
    _atomic_write(path, header + b"".join(payload))


def load_checkpoint(path) -> dict:
    blob = Path(path).read_bytes()
    pos = 0

    def readline():
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated checkpoint header", pos)
        line = blob[pos:end].decode("ascii", errors="replace")
        start = pos
        pos = end + 1
        return line, start

    line, off = readline()
    parts = line.split()
    if len(parts) != 2 or parts[0] != CKPT_MAGIC:
        raise FormatError("bad checkpoint magic", off)
    if parts[1] != str(CKPT_VERSION):
        raise FormatError(f"unsupported checkpoint version {parts[1]}", off)
    line, off = readline()
    try:
        tag, count = line.split()
        count = int(count)
        assert tag == "count"
    except Exception:
        raise FormatError("bad count line", off) from None
    entries = []
    for _ in range(count):
        line, off = readline()
        try:
            name, shape = line.split()
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split("x"))
        except ValueError:
            raise FormatError(f"bad tensor header line {line!r}", off) from None
        entries.append((name, dims))
    line, off = readline()
    if line != "END":
        raise FormatError("missing END marker", off)
    out = {}
    for name, dims in entries:
        nbytes = 8 * int(np.prod(dims, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated payload for {name}", pos)
        out[name] = np.frombuffer(blob, dtype=_LE_F64, count=nbytes // 8, offset=pos).astype(np.float64).reshape(dims)
        pos += nbytes
    if pos != len(blob):
        raise FormatError("trailing bytes after payload", pos)
    return out


def write_tensor(path, tensor) -> None:
    arr = np.asarray(getattr(tensor, "data", tensor), dtype=np.float64)
    head = TENSOR_MAGIC + struct.pack("<IQ", TENSOR_VERSION, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    _atomic_write(Path(path), head + np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())


def read_tensor(path):
    """Read a tensor file; raises :class:`FormatError` on any corruption."""
    from .tensor import Tensor

    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FormatError("file shorter than magic", len(blob))
    if blob[:8] != TENSOR_MAGIC:
        raise FormatError("bad magic", 0)
    if len(blob) < 20:
        raise FormatError("truncated header", len(blob))
    version, rank = struct.unpack_from("<IQ", blob, 8)
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported version {version}", 8)
    pos = 20
    if rank > 64 or len(blob) < pos + 8 * rank:
        raise FormatError(f"truncated or invalid dims (rank {rank})", 12)
    dims = struct.unpack_from(f"<{rank}Q", blob, pos)
    pos += 8 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) != pos + 8 * count:
        raise FormatError(f"payload holds {len(blob) - pos} bytes, expected {8 * count}", pos)
    data = np.frombuffer(blob, dtype=_LE_F64, count=count, offset=pos).astype(np.float64).reshape(dims)
    return Tensor(data)
