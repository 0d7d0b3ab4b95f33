"""Binary parameter checkpoints.

Layout (all integers little-endian): magic ``FFCK``, u32 version, u32 entry
count, then per parameter: u16 name length, utf-8 name, u8 rank, u32 dims,
float32 payload in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import Parameter

MAGIC = b"FFCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(named_params: list[tuple[str, Parameter]], path: str | Path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(named_params))]
    for name, param in named_params:
        encoded = name.encode("utf-8")
        data = np.ascontiguousarray(param.data, dtype="<f4")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a parameter checkpoint")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (rank,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from(f"<{rank}I", blob, offset)
        offset += 4 * rank
        n_bytes = 4 * int(np.prod(shape)) if rank else 4
        data = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        offset += n_bytes
        out[name] = data.reshape(shape).copy()
    if offset != len(blob):
        raise CheckpointError(f"{path} has {len(blob) - offset} trailing bytes")
    return out


def restore(named_params: list[tuple[str, Parameter]], weights: dict[str, np.ndarray]) -> None:
    names = [name for name, _ in named_params]
    missing = [n for n in names if n not in weights]
    extra = [n for n in weights if n not in set(names)]
    if missing or extra:
        raise CheckpointError(
            f"checkpoint mismatch: missing={missing[:5]} extra={extra[:5]}"
        )
    for name, param in named_params:
        stored = weights[name]
        if stored.shape != param.data.shape:
            raise CheckpointError(
                f"{name}: checkpoint shape {stored.shape} != model shape {param.data.shape}"
            )
        param.data = stored.astype(param.data.dtype, copy=True)
