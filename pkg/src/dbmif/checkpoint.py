"""Binary parameter container.

Layout (all integers unsigned 64-bit little-endian)::

    b"DBMIF1"  count
    repeated count times:
        name_length  name(utf-8)  rank  dim_0 .. dim_{rank-1}  values(float32 LE, C order)

The trailing "1" in the magic is the architecture version.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .errors import CheckpointError

MAGIC = b"DBMIF1"
_U64 = struct.Struct("<Q")


def save(path: str | Path, named: Mapping[str, Tensor] | list[tuple[str, Tensor]]) -> None:
    items = list(named.items()) if isinstance(named, Mapping) else list(named)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U64.pack(len(items)))
        for name, tensor in items:
            raw = name.encode("utf-8")
            data = np.ascontiguousarray(tensor.data, dtype="<f4")
            fh.write(_U64.pack(len(raw)))
            fh.write(raw)
            fh.write(_U64.pack(data.ndim))
            for dim in data.shape:
                fh.write(_U64.pack(dim))
            fh.write(data.tobytes())


def read(path: str | Path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise CheckpointError(f"{path}: bad magic {blob[:6]!r}, expected {MAGIC!r}")
    pos = len(MAGIC)

    def u64() -> int:
        nonlocal pos
        if pos + 8 > len(blob):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        (value,) = _U64.unpack_from(blob, pos)
        pos += 8
        return value

    out: dict[str, np.ndarray] = {}
    for _ in range(u64()):
        n = u64()
        name = blob[pos : pos + n].decode("utf-8")
        pos += n
        shape = tuple(u64() for _ in range(u64()))
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated values for {name!r}")
        out[name] = np.frombuffer(blob, dtype="<f4", count=nbytes // 4, offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes")
    return out


def load_into(
    path: str | Path,
    named: Mapping[str, Tensor] | list[tuple[str, Tensor]],
    prefix: str | None = None,
) -> None:
    """Copy stored values into ``named``; any name or shape mismatch raises.

    With ``prefix`` only stored records under that namespace are considered.
    """
    targets = dict(named.items() if isinstance(named, Mapping) else named)
    stored = read(path)
    if prefix is not None:
        stored = {k: v for k, v in stored.items() if k.startswith(prefix)}
    missing = sorted(set(targets) - set(stored))
    extra = sorted(set(stored) - set(targets))
    if missing or extra:
        raise CheckpointError(f"{path}: missing parameters {missing[:5]}, unexpected {extra[:5]}")
    for name, tensor in targets.items():
        if stored[name].shape != tensor.shape:
            raise CheckpointError(
                f"{path}: {name!r} has shape {stored[name].shape}, model expects {tensor.shape}"
            )
    for name, tensor in targets.items():
        tensor.data = stored[name].astype(tensor.data.dtype)
