"""Binary checkpoint container for named float64 arrays.

Layout (all integers little-endian):

    magic   5 bytes  b"WLSS1"
    count   uint32   number of entries
    entry*  repeated:
        name_len  uint32
        name      name_len bytes, UTF-8
        rank      uint32   (0 for a scalar)
        extents   rank * uint64
        values    prod(extents) * float64, little-endian (1 for rank 0)

Entries are written in sorted name order so identical contents give
identical bytes.  Optimizer state rides in the same container under
"<param>.m" / "<param>.v" names plus a scalar "adam.step" entry.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import AdamState
from .tensor import Tensor

MAGIC = b"WLSS1"


class CheckpointError(RuntimeError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        # note: ascontiguousarray would promote scalars to rank 1
        arr = np.asarray(arrays[name], dtype=np.float64, order="C")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:5]!r}, expected {MAGIC!r}")
    pos = 5
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        extents = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        n = int(np.prod(extents)) if rank else 1
        values = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).copy()
        pos += 8 * n
        out[name] = values.reshape(extents) if rank else values.reshape(())
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def pack_state(params: dict[str, Tensor], adam: AdamState | None = None,
               extra: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {name: p.data for name, p in params.items()}
    if adam is not None:
        for name in params:
            arrays[f"{name}.m"] = adam.m[name]
            arrays[f"{name}.v"] = adam.v[name]
        arrays["adam.step"] = np.float64(adam.t)
    if extra:
        arrays.update(extra)
    return arrays


def restore_adam(arrays: dict[str, np.ndarray], params: dict[str, Tensor],
                 adam: AdamState) -> None:
    for name in params:
        adam.m[name] = np.array(arrays[f"{name}.m"])
        adam.v[name] = np.array(arrays[f"{name}.v"])
    adam.t = int(arrays["adam.step"])
