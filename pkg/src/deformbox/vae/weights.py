"""SDMW weight container.

Layout (little-endian)::

    b"SDMW" | version u32 | tensor count u32 |
    per tensor: name length u32 | UTF-8 name | rank u32 | dims u64 * rank | float64 data (C order)

Model metadata travels as tensors named ``meta.*``.
"""

from __future__ import annotations

import json
import struct
from typing import Mapping

import numpy as np

MAGIC = b"SDMW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def save_weights(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name, arr in tensors.items():
            a = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", a.ndim))
            if a.ndim:
                f.write(struct.pack(f"<{a.ndim}Q", *a.shape))
            f.write(a.tobytes())


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise WeightFormatError(f"{path}: unsupported version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}Q", buf, off) if rank else ()
            off += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            out[name] = np.reshape(np.frombuffer(buf, dtype="<f8", count=size, offset=off), dims).astype(np.float64)
            off += 8 * size
    except (struct.error, ValueError) as exc:
        raise WeightFormatError(f"{path}: truncated file") from exc
    if off != len(buf):
        raise WeightFormatError(f"{path}: {len(buf) - off} trailing bytes")
    return out


def weights_to_json(tensors: Mapping[str, np.ndarray]) -> str:
    return json.dumps(
        {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=float).ravel().tolist()} for k, v in tensors.items()},
        sort_keys=True,
    )
