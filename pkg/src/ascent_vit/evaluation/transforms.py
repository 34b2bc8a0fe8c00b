"""Geometric transforms applied identically to images and masks."""

from __future__ import annotations

import numpy as np


def _crop75(a: np.ndarray) -> np.ndarray:
    """Centre crop to 75% of the side, then nearest resize back."""
    S = a.shape[-1]
    c = int(round(0.75 * S))
    off = (S - c) // 2
    idx = off + np.floor((np.arange(S) + 0.5) * c / S).astype(np.int64)
    return a[..., idx[:, None], idx[None, :]]


TRANSFORMS = {
    "identity": lambda a: a,
    "rot90": lambda a: np.rot90(a, 1, axes=(-2, -1)),
    "rot180": lambda a: np.rot90(a, 2, axes=(-2, -1)),
    "rot270": lambda a: np.rot90(a, 3, axes=(-2, -1)),
    "hflip": lambda a: a[..., :, ::-1],
    "crop75": _crop75,
}


def get_transform(name: str):
    """A named transform; ``a+b`` applies ``a`` then ``b``."""
    parts = name.split("+")
    unknown = [p for p in parts if p not in TRANSFORMS]
    if unknown:
        raise ValueError(f"unknown transform(s) {unknown}; choose from {sorted(TRANSFORMS)}")
    fns = [TRANSFORMS[p] for p in parts]

    def run(a):
        for f in fns:
            a = f(a)
        return np.ascontiguousarray(a)

    return run
