"""Binary parameter checkpoints.

Layout: ``b"LBK1"`` then, per parameter, a u32 name length, the UTF-8 name,
a u32 rank, rank u64 extents and the little-endian f64 payload. All
integers are little-endian. The file ends after the last parameter.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LBK1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, params: dict) -> None:
    chunks = [MAGIC]
    for name, value in params.items():
        arr = np.asarray(getattr(value, "data", value), dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    out: dict[str, np.ndarray] = {}
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        chunk = buf[pos : pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return out


def assign_params(params: dict, loaded: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into ``params``; names and shapes must agree."""
    for name, p in params.items():
        if name not in loaded:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if loaded[name].shape != p.shape:
            raise CheckpointError(
                f"parameter {name!r}: checkpoint shape {loaded[name].shape} != model shape {p.shape}"
            )
    extra = sorted(set(loaded) - set(params))
    if extra:
        raise CheckpointError(f"checkpoint has unexpected parameter {extra[0]!r}")
    for name, p in params.items():
        p.data[...] = loaded[name].astype(p.dtype)
