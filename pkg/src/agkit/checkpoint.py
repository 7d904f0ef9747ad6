"""Binary checkpoint format "AGK1": named float64 arrays.

Layout: 4 magic bytes, then per entry a u32-LE name length, the UTF-8 name,
a u8 rank, u32-LE extents, and the row-major f64-LE values. Loading validates
the magic and that the file length is exactly consumed.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"AGK1"


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        if arr.ndim > 4:
            raise ValueError(f"checkpoint entry {name!r} has rank {arr.ndim} > 4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"bad checkpoint magic {data[:4]!r}, expected {MAGIC!r}")
    pos = 4
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ValueError(f"truncated checkpoint: wanted {n} bytes at offset {pos}")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", take(1))
        if rank > 4:
            raise ValueError(f"checkpoint entry {name!r} has rank {rank} > 4")
        shape = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(take(8 * count), dtype="<f8")
        out[name] = values.reshape(shape).copy()
    if pos != len(data):
        raise ValueError(f"checkpoint has {len(data) - pos} trailing bytes")
    return out


def net_arrays(net) -> dict[str, np.ndarray]:
    """Every named parameter plus non-trainable buffers of a network."""
    out = {name: p.data for name, p in net.parameters().items()}
    out.update(net.state())
    return out


def restore_net(net, arrays: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into a freshly built network in place."""
    targets = net_arrays(net)
    missing = sorted(set(targets) - set(arrays))
    extra = sorted(set(arrays) - set(targets))
    if missing or extra:
        raise ValueError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
    for name, dst in targets.items():
        src = arrays[name]
        if src.shape != dst.shape:
            raise ValueError(
                f"checkpoint entry {name!r}: expected shape {dst.shape}, got {src.shape}"
            )
        dst[...] = src
