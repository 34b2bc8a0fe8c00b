"""ShapeConcepts: procedural images with pixel-exact concept masks.

Every image holds one to three filled shapes drawn from a four-shape
vocabulary. The first object drawn is the primary one and is always the
largest; the class is its shape. Spatial concept ``t`` is the union mask of
all objects of shape ``t``; the global concepts are "has a curved edge" (any
circle) and "multiple objects".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import Rng

SHAPES = ("circle", "square", "triangle", "cross")
GLOBAL_CONCEPTS = ("has_curved_edges", "multiple_objects")

# objects after the first must stay below this fraction of the primary area
DISTRACTOR_AREA_RATIO = 0.6


@dataclass
class ShapeConceptsSpec:
    seed: int = 0
    n_samples: int = 1000
    image_size: int = 32
    min_objects: int = 1
    max_objects: int = 3
    shapes: tuple[str, ...] = SHAPES

    def __post_init__(self):
        if not 1 <= self.min_objects <= self.max_objects:
            raise ValueError("need 1 <= min_objects <= max_objects")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown:
            raise ValueError(f"unknown shapes {sorted(unknown)}")


@dataclass
class LabeledSample:
    image: np.ndarray            # [C, H, W] in [0, 1]
    y: int
    global_bits: np.ndarray      # [T_global] of 0/1
    spatial_masks: np.ndarray    # [T_spatial, H, W] bool
    n_objects: int | None = None   # not stored in the cache


def rasterize(shape: str, cx: float, cy: float, s: float, size: int) -> np.ndarray:
    """Boolean mask of a filled shape; pixel (r, c) is tested at (c+0.5, r+0.5)."""
    centres = np.arange(size) + 0.5
    dx = centres[None, :] - cx
    dy = centres[:, None] - cy
    if shape == "circle":
        return dx * dx + dy * dy <= s * s
    if shape == "square":
        h = 0.8 * s
        return (np.abs(dx) <= h) & (np.abs(dy) <= h)
    if shape == "triangle":
        # apex up, base at dy = s, half-width s at the base
        t = (dy + s) / (2.0 * s)
        return (dy >= -s) & (dy <= s) & (np.abs(dx) <= s * t)
    if shape == "cross":
        arm = s / 3.0
        return (((np.abs(dx) <= arm) & (np.abs(dy) <= s))
                | ((np.abs(dy) <= arm) & (np.abs(dx) <= s)))
    raise ValueError(f"unknown shape {shape!r}")


def _boxes_clear(box, boxes, margin: float) -> bool:
    x0, y0, x1, y1 = box
    for a0, b0, a1, b1 in boxes:
        if x0 < a1 + margin and a0 < x1 + margin and y0 < b1 + margin and b0 < y1 + margin:
            return False
    return True


def _place(rng: Rng, s: float, size: int, boxes, tries: int = 40):
    span = size - 2 * s - 2
    if span <= 0:
        return None
    for _ in range(tries):
        cx = 1 + s + rng.random() * span
        cy = 1 + s + rng.random() * span
        box = (cx - s, cy - s, cx + s, cy + s)
        if _boxes_clear(box, boxes, margin=2.0):
            return cx, cy, box
    return None


def generate_sample(spec: ShapeConceptsSpec, index: int) -> LabeledSample:
    """Sample ``index`` of the stream; a pure function of ``(spec.seed, index)``."""
    rng = Rng(spec.seed).spawn(index + 1)
    size = spec.image_size
    vocab = spec.shapes
    n_target = spec.min_objects + rng.integers(spec.max_objects - spec.min_objects + 1)
    image = np.zeros((1, size, size))
    masks = np.zeros((len(vocab), size, size), dtype=bool)
    boxes: list[tuple] = []
    objects = []   # (shape index, area)
    scale = size / 32.0
    for _ in range(n_target):
        shape = rng.integers(len(vocab))
        primary = not objects
        if primary:
            s = scale * (5.0 + 3.0 * rng.random())
        else:
            s = scale * (2.5 + (objects[0][2] / scale - 2.5) * 0.7 * rng.random())
        spot = _place(rng, s, size, boxes)
        if spot is None:
            continue
        cx, cy, box = spot
        m = rasterize(vocab[shape], cx, cy, s, size)
        area = int(m.sum())
        if not primary:
            # shrink until clearly smaller than the primary object
            while area >= DISTRACTOR_AREA_RATIO * objects[0][1] and s > 1.0:
                s *= 0.85
                m = rasterize(vocab[shape], cx, cy, s, size)
                area = int(m.sum())
            if area == 0 or area >= DISTRACTOR_AREA_RATIO * objects[0][1]:
                continue
        intensity = 0.6 + 0.4 * rng.random()
        image[0][m] = intensity
        masks[shape] |= m
        boxes.append(box)
        objects.append((shape, area, s))
    # primary is the largest by construction; keep the stated rule explicit
    largest = max(range(len(objects)), key=lambda i: (objects[i][1], -i))
    y = objects[largest][0]
    curved = any(vocab[o[0]] == "circle" for o in objects)
    bits = np.array([int(curved), int(len(objects) >= 2)], dtype=np.int64)
    return LabeledSample(image, int(y), bits, masks, len(objects))


def generate_shapeconcepts(spec: ShapeConceptsSpec) -> list[LabeledSample]:
    return [generate_sample(spec, i) for i in range(spec.n_samples)]


def class_from_masks(masks: np.ndarray) -> int:
    """Recover the class from spatial masks alone: the concept owning the
    largest connected component (objects never touch, so components are
    objects). Ties go to the lower concept index."""
    from scipy import ndimage

    best, best_area = -1, -1
    for t, m in enumerate(masks):
        lab, n = ndimage.label(m)
        if n == 0:
            continue
        area = int(np.bincount(lab.ravel())[1:].max())
        if area > best_area:
            best, best_area = t, area
    return best


def object_area(shape: str, s: float, size: int = 32) -> int:
    return int(rasterize(shape, size / 2, size / 2, s, size).sum())


__all__ = ["SHAPES", "GLOBAL_CONCEPTS", "ShapeConceptsSpec", "LabeledSample", "rasterize",
           "generate_sample", "generate_shapeconcepts", "class_from_masks", "object_area"]
