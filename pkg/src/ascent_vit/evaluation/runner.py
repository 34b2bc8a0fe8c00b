"""Batched inference and the metrics report."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..data.targets import ConceptDataset, masks_to_H
from .metrics import (Rate, accuracy, concept_01_counts, mean_of, pixel_accuracy_counts,
                      px_tpr_counts)
from .transforms import get_transform


def worker_count() -> int:
    """``ASCENT_THREADS`` (default 1) caps the evaluation worker threads."""
    raw = os.environ.get("ASCENT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"ASCENT_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


@dataclass
class Predictions:
    logits: np.ndarray
    a_spatial: np.ndarray | None      # [n, N+1, T_spatial]
    a_global: np.ndarray | None       # [n, N+1, T_global]
    intervened: np.ndarray | None = None


def _batches(n: int, batch_size: int):
    return [(s, min(s + batch_size, n)) for s in range(0, n, batch_size)]


def predict(model, dataset: ConceptDataset, batch_size: int = 64, threads: int | None = None,
            intervene: bool = False) -> Predictions:
    """Eval-mode forward over ``dataset``.

    Batches may run on several threads; results are placed by batch index,
    so the output does not depend on the thread count or scheduling.
    """
    threads = worker_count() if threads is None else max(1, threads)
    spans = _batches(len(dataset), batch_size)

    def run(span):
        s, e = span
        out = model(dataset.images[s:e], training=False)
        sp = out.a_spatial.data if out.a_spatial is not None else None
        gl = out.a_global.data if out.a_global is not None else None
        iv = None
        if intervene and out.attention is not None:
            iv = model.intervene_output(out, dataset.global_bits[s:e]).data
        return out.logits.data, sp, gl, iv

    if threads == 1 or len(spans) <= 1:
        parts = [run(sp) for sp in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, spans))

    def cat(i):
        if not parts or parts[0][i] is None:
            return None
        return np.concatenate([p[i] for p in parts])

    if not parts:
        return Predictions(np.zeros((0, 0)), None, None, None)
    return Predictions(cat(0), cat(1), cat(2), cat(3))


@dataclass
class MetricsReport:
    task_accuracy: Rate
    px_tpr: dict[str, Rate] = field(default_factory=dict)
    px_tpr_mean: Rate = Rate(0, 0)
    pixel_accuracy: Rate = Rate(0, 0)
    concept_01_error: Rate = Rate(0, 0)
    intervention_success_rate: Rate | None = None

    def rows(self):
        def row(metric, concept, r: Rate):
            v = r.value
            return [metric, concept, "undefined" if v is None else repr(float(v)),
                    repr(float(r.numerator)), repr(float(r.denominator))]

        out = [row("task_accuracy", "", self.task_accuracy)]
        for name, r in self.px_tpr.items():
            out.append(row("px_tpr", name, r))
        out.append(row("px_tpr", "mean", self.px_tpr_mean))
        out.append(row("pixel_accuracy", "", self.pixel_accuracy))
        out.append(row("concept_01_error", "", self.concept_01_error))
        if self.intervention_success_rate is not None:
            out.append(row("intervention_success_rate", "", self.intervention_success_rate))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["metric", "concept", "value", "numerator", "denominator"])
            w.writerows(self.rows())


def intervention_counts(logits, intervened, y) -> Rate:
    """Corrected / initially misclassified; empty denominator is undefined."""
    wrong = np.asarray(logits).argmax(axis=-1) != np.asarray(y)
    fixed = np.asarray(intervened).argmax(axis=-1) == np.asarray(y)
    return Rate(int((wrong & fixed).sum()), int(wrong.sum()))


def report_from(pred: Predictions, dataset: ConceptDataset, concept_names=None,
                tau_spatial: float | None = None, tau_global: float | None = None) -> MetricsReport:
    rep = MetricsReport(accuracy(pred.logits, dataset.y))
    if pred.a_spatial is not None:
        tp, gt = px_tpr_counts(pred.a_spatial[:, 1:], dataset.masks, dataset.patch_size, tau_spatial)
        names = concept_names or [f"concept{t}" for t in range(len(tp))]
        rep.px_tpr = {n: Rate(int(a), int(b)) for n, a, b in zip(names, tp, gt)}
        rep.px_tpr_mean = mean_of([r for r in rep.px_tpr.values() if r.defined])
        rep.pixel_accuracy = Rate(*pixel_accuracy_counts(pred.a_spatial[:, 1:], dataset.masks,
                                                         dataset.patch_size, tau_spatial))
    if pred.a_global is not None:
        rep.concept_01_error = Rate(*concept_01_counts(pred.a_global, dataset.global_bits, tau_global))
    if pred.intervened is not None:
        rep.intervention_success_rate = intervention_counts(pred.logits, pred.intervened, dataset.y)
    return rep


def evaluate(model, dataset: ConceptDataset, batch_size: int = 64, threads: int | None = None,
             intervene: bool = False, concept_names=None, tau_spatial=None,
             tau_global=None) -> MetricsReport:
    pred = predict(model, dataset, batch_size, threads, intervene=intervene)
    return report_from(pred, dataset, concept_names, tau_spatial, tau_global)


def intervention_eval(model, dataset: ConceptDataset, batch_size: int = 64,
                      threads: int | None = None) -> Rate:
    pred = predict(model, dataset, batch_size, threads, intervene=True)
    return intervention_counts(pred.logits, pred.intervened, dataset.y)


def transform_dataset(dataset: ConceptDataset, name: str) -> ConceptDataset:
    f = get_transform(name)
    images = f(dataset.images)
    masks = f(dataset.masks)
    targets = [masks_to_H(m, dataset.patch_size) for m in masks]
    return replace(dataset, images=images, masks=masks,
                   H=np.stack([t.H for t in targets]) if targets else dataset.H,
                   H_mask=np.stack([t.mask for t in targets]) if targets else dataset.H_mask)


def robustness_eval(model, dataset: ConceptDataset, transforms=("identity",),
                    batch_size: int = 64, threads: int | None = None) -> dict[str, MetricsReport]:
    """Metrics recomputed after transforming images and masks together."""
    return {name: evaluate(model, transform_dataset(dataset, name), batch_size, threads)
            for name in transforms}
