"""IDX (MNIST-style) files and the digit concept lookup."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..container import FormatError
from ..numerics import Rng
from .targets import ConceptDataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
_UBYTE = 0x08

CURVED_DIGITS = frozenset({0, 2, 3, 5, 6, 8, 9})
STRAIGHT_DIGITS = frozenset({1, 2, 4, 5, 7, 9})


def encode_idx(array: np.ndarray) -> bytes:
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise ValueError("only unsigned-byte IDX payloads are supported")
    header = struct.pack(">I", (_UBYTE << 8) | a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a).tobytes()


def parse_idx(buf: bytes, magic: int | None = None) -> np.ndarray:
    """Decode an unsigned-byte IDX buffer; ``magic`` pins the expected header."""
    if len(buf) < 4:
        raise FormatError("truncated IDX header", len(buf))
    found = struct.unpack(">I", buf[:4])[0]
    if magic is not None and found != magic:
        raise FormatError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    if buf[0] != 0 or buf[1] != 0:
        raise FormatError("IDX magic must start with two zero bytes", 0)
    if buf[2] != _UBYTE:
        raise FormatError(f"unsupported IDX element type 0x{buf[2]:02x}", 2)
    rank = buf[3]
    end = 4 + 4 * rank
    if len(buf) < end:
        raise FormatError(f"truncated dimension table ({rank} dims)", len(buf))
    dims = struct.unpack(f">{rank}I", buf[4:end])
    n = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(buf) - end != n:
        raise FormatError(f"payload has {len(buf) - end} bytes, dims {dims} declare {n}",
                          min(len(buf), end + n))
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=end).reshape(dims)


def pad_to(images: np.ndarray, side: int) -> np.ndarray:
    """Zero-pad [n, h, w] symmetrically (extra pixel after) to side x side."""
    n, h, w = images.shape
    if h > side or w > side:
        raise ValueError(f"images {h}x{w} larger than {side}")
    top, left = (side - h) // 2, (side - w) // 2
    out = np.zeros((n, side, side), dtype=images.dtype)
    out[:, top:top + h, left:left + w] = images
    return out


def load_idx(images_path, labels_path, side: int = 32):
    """List of ``(image [1, side, side] in [0,1], label)`` pairs."""
    imgs = parse_idx(Path(images_path).read_bytes(), IMAGES_MAGIC)
    labels = parse_idx(Path(labels_path).read_bytes(), LABELS_MAGIC)
    if len(imgs) != len(labels):
        raise FormatError(f"{len(imgs)} images but {len(labels)} labels", 4)
    scaled = pad_to(imgs, side).astype(np.float64) / 255.0
    return [(scaled[i][None], int(labels[i])) for i in range(len(labels))]


def synth_idx(rng: Rng, n: int, side: int = 28) -> tuple[np.ndarray, np.ndarray]:
    """Random uint8 digit-like images and labels for format tests."""
    words = np.array(rng.u64_array(n * side * side), dtype=np.uint64)
    images = (words & np.uint64(0xFF)).astype(np.uint8).reshape(n, side, side)
    labels = np.array([rng.integers(10) for _ in range(n)], dtype=np.uint8)
    return images, labels


def annotate_cmnist(digit: int):
    """``((curved, straight), {"parity": 0 even / 1 odd, "digit": d})``."""
    d = int(digit)
    if not 0 <= d <= 9:
        raise ValueError(f"digit {digit} outside 0..9")
    bits = (int(d in CURVED_DIGITS), int(d in STRAIGHT_DIGITS))
    return bits, {"parity": d % 2, "digit": d}


def build_cmnist_dataset(pairs, task: str = "parity", patch_size: int = 4):
    """Global-concept-only dataset from ``(image, digit)`` pairs.

    Curved/straight bits come from :func:`annotate_cmnist`; there are no
    pixel-level concept masks, so the spatial arrays have zero columns.
    """
    if task not in ("parity", "digit"):
        raise ValueError(f"unknown C-MNIST task {task!r}")
    images = np.stack([img for img, _ in pairs]) if pairs else np.zeros((0, 1, 32, 32))
    notes = [annotate_cmnist(d) for _, d in pairs]
    n, _, h, w = images.shape
    patches = (h // patch_size) * (w // patch_size)
    return ConceptDataset(
        images=images,
        y=np.array([tasks[task] for _, tasks in notes], dtype=np.int64),
        global_bits=np.array([bits for bits, _ in notes], dtype=np.int64).reshape(n, 2),
        masks=np.zeros((n, 0, h, w), dtype=bool),
        H=np.zeros((n, patches, 0)),
        H_mask=np.zeros((n, patches), dtype=bool),
        patch_size=patch_size,
    )
