"""Patch-level concept targets, in-memory datasets and splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Rng


@dataclass
class PatchTarget:
    H: np.ndarray      # [N, T_spatial]
    mask: np.ndarray   # [N] bool


def masks_to_H(spatial_masks: np.ndarray, patch_size: int) -> PatchTarget:
    """Per-patch concept coverage, row-normalised over concepts.

    ``spatial_masks`` is [T, H, W]. Patches with no concept pixels are
    masked out and left at zero.
    """
    m = np.asarray(spatial_masks, dtype=np.float64)
    T, Hh, Ww = m.shape
    p = patch_size
    if Hh % p or Ww % p:
        raise ValueError(f"mask extent {Hh}x{Ww} not divisible by patch size {p}")
    gh, gw = Hh // p, Ww // p
    cov = m.reshape(T, gh, p, gw, p).sum(axis=(2, 4)) / (p * p)     # [T, gh, gw]
    cov = cov.reshape(T, gh * gw).T                                 # [N, T]
    total = cov.sum(axis=1)
    keep = total > 0
    H = np.zeros_like(cov)
    H[keep] = cov[keep] / total[keep, None]
    return PatchTarget(H, keep)


@dataclass
class ConceptDataset:
    """Column-stacked samples ready for batching.

    ``H``/``H_mask`` are the patch targets for ``patch_size`` and
    ``masks`` the pixel masks used by the localisation metrics.
    """

    images: np.ndarray       # [n, C, H, W]
    y: np.ndarray            # [n]
    global_bits: np.ndarray  # [n, T_global]
    masks: np.ndarray        # [n, T_spatial, H, W] bool
    H: np.ndarray            # [n, N, T_spatial]
    H_mask: np.ndarray       # [n, N] bool
    patch_size: int = 4

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "ConceptDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return ConceptDataset(self.images[idx], self.y[idx], self.global_bits[idx],
                              self.masks[idx], self.H[idx], self.H_mask[idx], self.patch_size)

    @property
    def t_spatial(self) -> int:
        return self.masks.shape[1]

    @property
    def t_global(self) -> int:
        return self.global_bits.shape[1]


def build_dataset(samples, patch_size: int) -> ConceptDataset:
    images = np.stack([s.image for s in samples])
    masks = np.stack([s.spatial_masks.astype(bool) for s in samples])
    targets = [masks_to_H(s.spatial_masks, patch_size) for s in samples]
    return ConceptDataset(
        images=images,
        y=np.array([s.y for s in samples], dtype=np.int64),
        global_bits=np.stack([np.asarray(s.global_bits, dtype=np.int64) for s in samples]),
        masks=masks,
        H=np.stack([t.H for t in targets]),
        H_mask=np.stack([t.mask for t in targets]),
        patch_size=patch_size,
    )


def split(dataset, fractions, seed: int):
    """Seeded shuffle, then contiguous slices with the given fractions.

    Works on anything indexable with ``len``; :class:`ConceptDataset` splits
    into datasets, other sequences into lists.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ValueError(f"fractions {tuple(fractions)} must be non-negative and sum to 1")
    n = len(dataset)
    order = Rng(seed).permutation(n)
    cuts = np.rint(np.cumsum(fr) * n).astype(np.int64)
    cuts[-1] = n
    parts, start = [], 0
    for stop in cuts:
        idx = order[start:stop]
        if isinstance(dataset, ConceptDataset):
            parts.append(dataset.subset(idx))
        else:
            parts.append([dataset[i] for i in idx])
        start = stop
    return tuple(parts)
