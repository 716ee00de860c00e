"""Binary parameter checkpoints.

Layout (little-endian):
    magic        11 bytes  b"ABLAB-TNSR\\x00"
    version      u16
    tensor count u32
    per tensor:
        name length u16, UTF-8 name
        rank u8, dims u32 each
        payload: raw float32 values

An optional JSON sidecar (same path + ".json") carries model metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"ABLAB-TNSR\x00"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_tensors(path, tensors: dict[str, np.ndarray | Tensor], meta: dict | None = None) -> str:
    """Write named tensors; returns the sha256 content hash of the file."""
    path = Path(path)
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<HI", VERSION, len(tensors))
    for name in sorted(tensors):
        arr = tensors[name]
        data = (arr.data if isinstance(arr, Tensor) else np.asarray(arr)).astype("<f4")
        enc = name.encode("utf-8")
        blob += struct.pack("<H", len(enc)) + enc
        blob += struct.pack("<B", data.ndim)
        for d in data.shape:
            blob += struct.pack("<I", d)
        blob += data.tobytes(order="C")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(bytes(blob))
    digest = hashlib.sha256(bytes(blob)).hexdigest()
    if meta is not None:
        side = dict(meta)
        side["checkpoint_sha256"] = digest
        Path(str(path) + ".json").write_text(json.dumps(side, indent=2, sort_keys=True))
    return digest


def load_tensors(path, requires_grad: bool = False) -> dict[str, Tensor]:
    path = Path(path)
    blob = path.read_bytes()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a tensor checkpoint")
    off = len(MAGIC)
    version, count = struct.unpack_from("<HI", blob, off)
    off += 6
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    out: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        dims = struct.unpack_from(f"<{rank}I", blob, off) if rank else ()
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=off).reshape(dims)
        off += 4 * n
        out[name] = Tensor(arr.copy(), requires_grad=requires_grad, dtype=np.float32)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out


def load_meta(path) -> dict:
    return json.loads(Path(str(path) + ".json").read_text())


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
