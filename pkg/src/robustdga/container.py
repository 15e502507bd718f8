"""Binary container for named float32 tensors (model files and v_adv batches).

Layout, all little-endian::

    b"DGAF" | u16 version | u32 meta_len | meta (JSON, utf-8)
    | u32 count | count x (u16 name_len | name | u8 rank | rank x u32 dim | f32 payload)
    | u32 CRC32 of everything before it
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CorruptFile, FormatVersionMismatch

MAGIC = b"DGAF"
VERSION = 1


def dumps(tensors: dict[str, np.ndarray], meta: dict) -> bytes:
    parts = [MAGIC, struct.pack("<H", VERSION)]
    mb = json.dumps(meta, sort_keys=True).encode()
    parts += [struct.pack("<I", len(mb)), mb, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode()
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", arr.ndim)]
        parts += [struct.pack(f"<{arr.ndim}I", *arr.shape), arr.tobytes()]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def loads(data: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(data) < 10:
        raise CorruptFile("file too short")
    if data[:4] != MAGIC:
        raise FormatVersionMismatch(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise FormatVersionMismatch(f"unsupported format version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or damaged file)")
    try:
        off = 6
        (mlen,) = struct.unpack_from("<I", body, off)
        off += 4
        meta = json.loads(body[off:off + mlen])
        off += mlen
        (count,) = struct.unpack_from("<I", body, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", body, off)
            off += 2
            name = body[off:off + nlen].decode()
            off += nlen
            (rank,) = struct.unpack_from("<B", body, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            size = int(np.prod(shape)) * 4
            if off + size > len(body):
                raise CorruptFile("tensor payload runs past end of file")
            tensors[name] = np.frombuffer(body, dtype="<f4", count=size // 4,
                                          offset=off).reshape(shape).astype(np.float32)
            off += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFile(str(exc)) from exc
    return tensors, meta


def save(path, tensors: dict[str, np.ndarray], meta: dict):
    Path(path).write_bytes(dumps(tensors, meta))


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
