"""Concept metrics, intervention, robustness and heatmap export."""

from .export import concept_maps, export_maps, quantize_map, read_pgm, write_pgm
from .metrics import (Rate, accuracy, concept_01_error, pixel_accuracy, px_tpr, px_tpr_counts,
                      upsample_nearest)
from .runner import (MetricsReport, Predictions, evaluate, intervention_counts, intervention_eval,
                     predict, report_from, robustness_eval, transform_dataset, worker_count)
from .transforms import TRANSFORMS, get_transform

__all__ = [
    "MetricsReport", "Predictions", "Rate", "TRANSFORMS", "accuracy", "concept_01_error",
    "concept_maps", "evaluate", "export_maps", "get_transform", "intervention_counts",
    "intervention_eval", "pixel_accuracy", "predict", "px_tpr", "px_tpr_counts", "quantize_map",
    "read_pgm", "report_from", "robustness_eval", "transform_dataset", "upsample_nearest",
    "worker_count", "write_pgm",
]
