"""Task and concept metrics computed from counts.

Every rate is carried as a :class:`Rate` so the reported value can always be
rebuilt from its numerator and denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rate:
    numerator: float
    denominator: float

    @property
    def defined(self) -> bool:
        return self.denominator > 0

    @property
    def value(self) -> float | None:
        """``None`` is the undefined sentinel for an empty denominator."""
        return self.numerator / self.denominator if self.denominator > 0 else None

    def __add__(self, other: "Rate") -> "Rate":
        return Rate(self.numerator + other.numerator, self.denominator + other.denominator)


def upsample_nearest(att: np.ndarray, patch_size: int) -> np.ndarray:
    """[..., N, T] patch attention -> [..., T, side*p, side*p] pixel maps."""
    a = np.asarray(att)
    *lead, N, T = a.shape
    side = int(round(np.sqrt(N)))
    if side * side != N:
        raise ValueError(f"{N} patches do not form a square grid")
    grid = np.moveaxis(a.reshape(tuple(lead) + (side, side, T)), -1, -3)
    return np.repeat(np.repeat(grid, patch_size, axis=-2), patch_size, axis=-1)


def _predicted(att, patch_size, tau):
    a = np.asarray(att, dtype=np.float64)
    T = a.shape[-1]
    tau = 1.0 / T if tau is None else tau
    return upsample_nearest(a, patch_size) >= tau


def px_tpr_counts(att, masks, patch_size: int, tau: float | None = None):
    """Per-concept (true positive pixels, ground-truth pixels) summed over a batch.

    ``att`` is [B, N, T] (CLS row already dropped), ``masks`` [B, T, H, W].
    A pixel is positive for concept t when its patch has ``att >= tau``
    (default ``1 / T``).
    """
    pred = _predicted(att, patch_size, tau)
    gt = np.asarray(masks, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"attention maps {pred.shape} vs masks {gt.shape}")
    axes = (0, 2, 3) if gt.ndim == 4 else (1, 2)
    tp = (pred & gt).sum(axis=axes)
    return tp.astype(np.int64), gt.sum(axis=axes).astype(np.int64)


def px_tpr(att, masks, patch_size: int, tau: float | None = None):
    """``(per-concept Rates, mean Rate)``; concepts without ground truth are
    left out of the mean."""
    tp, gt = px_tpr_counts(att, masks, patch_size, tau)
    per = [Rate(int(a), int(b)) for a, b in zip(tp, gt)]
    return per, mean_of([r for r in per if r.defined])


def mean_of(rates) -> Rate:
    vals = [r.value for r in rates]
    return Rate(float(sum(vals)), float(len(vals)))


def pixel_accuracy_counts(att, masks, patch_size: int, tau: float | None = None):
    pred = _predicted(att, patch_size, tau)
    gt = np.asarray(masks, dtype=bool)
    return int((pred == gt).sum()), int(gt.size)


def pixel_accuracy(att, masks, patch_size: int, tau: float | None = None) -> Rate:
    return Rate(*pixel_accuracy_counts(att, masks, patch_size, tau))


def concept_01_counts(att_global, bits, tau: float | None = None):
    """Disagreements between thresholded token-mean global attention and bits.

    ``att_global`` is [B, T_tokens, T_global]; all token rows (CLS included)
    are averaged, as in the prediction rule.
    """
    a = np.asarray(att_global, dtype=np.float64)
    T = a.shape[-1]
    tau = 1.0 / T if tau is None else tau
    present = a.mean(axis=-2) >= tau
    b = np.asarray(bits).astype(bool)
    return int((present != b).sum()), int(b.size)


def concept_01_error(att_global, bits, tau: float | None = None) -> Rate:
    return Rate(*concept_01_counts(att_global, bits, tau))


def accuracy(logits, y) -> Rate:
    pred = np.asarray(logits).argmax(axis=-1)
    y = np.asarray(y)
    return Rate(int((pred == y).sum()), int(y.size))
