"""Attention heatmaps as ASCII PGM (P2) images."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import upsample_nearest


def quantize_map(column: np.ndarray) -> np.ndarray:
    """Map values linearly from [0, max] to integers 0..255 (all zero if max is 0)."""
    c = np.asarray(column, dtype=np.float64)
    top = c.max() if c.size else 0.0
    if top <= 0:
        return np.zeros(c.shape, dtype=np.int64)
    return np.rint(np.clip(c, 0.0, None) / top * 255.0).astype(np.int64)


def write_pgm(path, pixels: np.ndarray) -> None:
    px = np.asarray(pixels, dtype=np.int64)
    if px.ndim != 2 or px.min(initial=0) < 0 or px.max(initial=0) > 255:
        raise ValueError("PGM pixels must be a 2-D array of integers in 0..255")
    h, w = px.shape
    lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(int(v)) for v in row) for row in px]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pgm(path) -> np.ndarray:
    """Parse an ASCII PGM; ``#`` comments are skipped."""
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        tokens += line.split("#", 1)[0].split()
    if not tokens or tokens[0] != "P2":
        raise ValueError("not an ASCII PGM (missing P2 magic)")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if vals.size != w * h:
        raise ValueError(f"PGM declares {w}x{h} pixels but holds {vals.size}")
    if vals.max(initial=0) > maxval:
        raise ValueError("pixel exceeds maxval")
    return vals.reshape(h, w)


def concept_maps(a_spatial: np.ndarray, patch_size: int, has_cls: bool = True) -> np.ndarray:
    """[T, H, W] quantised maps from one sample's spatial attention [tokens, T]."""
    a = np.asarray(a_spatial, dtype=np.float64)
    if has_cls:
        a = a[1:]
    up = upsample_nearest(a, patch_size)
    return np.stack([quantize_map(m) for m in up])


def export_maps(a_spatial: np.ndarray, path_prefix, patch_size: int,
                has_cls: bool = True) -> list[Path]:
    """Write ``<prefix>_concept<t>.pgm`` for every spatial concept."""
    maps = concept_maps(a_spatial, patch_size, has_cls)
    out = []
    for t, m in enumerate(maps):
        p = Path(f"{path_prefix}_concept{t}.pgm")
        write_pgm(p, m)
        out.append(p)
    return out
