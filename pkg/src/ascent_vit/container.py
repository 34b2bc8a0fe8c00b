"""Named float64 tensor container ("ACVT" files).

Layout, little-endian throughout::

    b"ACVT"  u32 version(=1)  u32 tensor_count
    per tensor: u32 name_len, name (UTF-8), u32 rank, u32 dims[rank], f64 data row-major
    u32 config_len, config (UTF-8)
    u64 rng_state[4]

Checkpoints and the dataset cache both use it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"ACVT"
VERSION = 1


class FormatError(ValueError):
    """Malformed binary input; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Container:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    config: str = ""
    rng_state: tuple[int, int, int, int] = (0, 0, 0, 0)


def encode(c: Container) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(c.tensors))]
    for name, arr in c.tensors.items():
        raw = name.encode("utf-8")
        a = np.asarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    cfg = c.config.encode("utf-8")
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    if len(c.rng_state) != 4:
        raise ValueError("rng_state must have four 64-bit words")
    parts.append(struct.pack("<4Q", *c.rng_state))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise FormatError(f"truncated file: need {n} bytes for {what}, "
                              f"{len(self.buf) - self.pos} left", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(buf: bytes) -> Container:
    r = _Reader(bytes(buf))
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, expected b'ACVT'", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    count = r.u32("tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        name_len = r.u32("name length")
        try:
            name = r.take(name_len, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not UTF-8", at + 4) from None
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r}", at)
        rank_at = r.pos
        rank = r.u32("rank")
        if rank > 32:
            raise FormatError(f"implausible rank {rank}", rank_at)
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank, "dims"))
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        data = r.take(8 * n, f"data of {name!r}")
        tensors[name] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(dims)
    cfg_len = r.u32("config length")
    cfg_at = r.pos
    try:
        config = r.take(cfg_len, "config").decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError("config blob is not UTF-8", cfg_at) from None
    rng_state = struct.unpack("<4Q", r.take(32, "rng state"))
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", r.pos)
    return Container(tensors, config, tuple(rng_state))


def save(path, c: Container) -> None:
    Path(path).write_bytes(encode(c))


def load(path) -> Container:
    return decode(Path(path).read_bytes())
