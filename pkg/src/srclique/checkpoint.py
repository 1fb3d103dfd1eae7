"""Binary parameter checkpoints.

Layout: the 8-byte magic ``WSRCKPT1``, then one record per tensor: a
little-endian u32 name length, the UTF-8 name, four little-endian u32 dims
(shapes with fewer axes are left-padded with 1s) and the values as
little-endian float64 in C order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .nn import Module

MAGIC = b"WSRCKPT1"


class CheckpointError(ValueError):
    pass


def encode(named) -> bytes:
    parts = [MAGIC]
    for name, arr in named:
        arr = np.asarray(arr)
        if arr.ndim > 4:
            raise CheckpointError(f"{name}: {arr.ndim}-D tensors cannot be stored")
        raw = name.encode("utf-8")
        dims = (1,) * (4 - arr.ndim) + arr.shape
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<4I", *dims))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> dict[str, np.ndarray]:
    """Name -> float64 array with the stored (padded) 4-D shape."""
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    out: dict[str, np.ndarray] = {}
    pos = 8
    while pos < len(blob):
        try:
            (n,) = struct.unpack_from("<I", blob, pos)
            name = blob[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            dims = struct.unpack_from("<4I", blob, pos)
            pos += 16
        except (struct.error, UnicodeDecodeError) as exc:
            raise CheckpointError(f"corrupt record header at byte {pos}: {exc}") from None
        size = int(np.prod(dims)) * 8
        if pos + size > len(blob):
            raise CheckpointError(f"{name}: payload truncated at byte {pos}")
        out[name] = np.frombuffer(blob, dtype="<f8", count=size // 8, offset=pos).reshape(dims).astype(np.float64)
        pos += size
    return out


def save(model: Module, path: str | Path) -> None:
    Path(path).write_bytes(encode((name, p.data) for name, p in model.named_parameters()))


def load(model: Module, path: str | Path) -> None:
    """Copy stored values into the model's parameters (cast to their dtype)."""
    stored = decode(Path(path).read_bytes())
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(stored))
    extra = sorted(set(stored) - set(params))
    if missing or extra:
        raise CheckpointError(f"checkpoint does not match model: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, p in params.items():
        arr = stored[name]
        if arr.size != p.data.size:
            raise CheckpointError(f"{name}: stored {arr.shape} vs model {p.data.shape}")
        p.data[...] = arr.reshape(p.data.shape)
