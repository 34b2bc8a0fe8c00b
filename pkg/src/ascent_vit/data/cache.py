"""On-disk ShapeConcepts cache: tensor container plus a CSV sidecar."""

from __future__ import annotations

import csv
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import container
from ..numerics import Rng
from .shapes import LabeledSample, ShapeConceptsSpec


def sidecar_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".csv")


def save_cache(path, samples: list[LabeledSample], spec: ShapeConceptsSpec) -> None:
    tensors = {}
    for i, s in enumerate(samples):
        tensors[f"img/{i}"] = s.image
        for t, m in enumerate(s.spatial_masks):
            tensors[f"mask/{i}/{t}"] = m.astype(np.float64)
    echo = "\n".join(f"{k} = {v}" for k, v in asdict(spec).items())
    container.save(path, container.Container(tensors, echo, Rng(spec.seed).state))
    with open(sidecar_path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "y", "global_bits"])
        for i, s in enumerate(samples):
            w.writerow([i, s.y, "".join(str(int(b)) for b in s.global_bits)])


def load_cache(path) -> list[LabeledSample]:
    c = container.load(path)
    with open(sidecar_path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        i = int(row["index"])
        masks = []
        t = 0
        while f"mask/{i}/{t}" in c.tensors:
            masks.append(c.tensors[f"mask/{i}/{t}"] > 0.5)
            t += 1
        bits = np.array([int(ch) for ch in row["global_bits"]], dtype=np.int64)
        out.append(LabeledSample(c.tensors[f"img/{i}"], int(row["y"]), bits, np.stack(masks)))
    return out
