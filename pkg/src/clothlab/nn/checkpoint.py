"""Binary parameter checkpoints.

Layout (little-endian): magic "LGNN", u16 version, u32 parameter count, then
per parameter: u16 name length, name bytes (UTF-8), u8 rank, u32 dims, f64
values in C order.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import DatasetFormatError

MAGIC = b"LGNN"
VERSION = 1


def save_params(params: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(params)))
        for name in sorted(params):
            arr = np.asarray(params[name], dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    pos = 10
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos : pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", data, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", data, pos)
            pos += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos)
            if arr.size != n:
                raise struct.error("short read")
            pos += 8 * n
            params[name] = arr.reshape(dims).astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise DatasetFormatError(f"{path}: truncated checkpoint ({exc})") from None
    return params
