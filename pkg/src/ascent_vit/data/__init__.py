"""Datasets: ShapeConcepts, IDX digits, patch targets."""

from .cache import load_cache, save_cache
from .idx import annotate_cmnist, build_cmnist_dataset, encode_idx, load_idx, parse_idx, synth_idx
from .shapes import (GLOBAL_CONCEPTS, SHAPES, LabeledSample, ShapeConceptsSpec, class_from_masks,
                     generate_sample, generate_shapeconcepts, rasterize)
from .targets import ConceptDataset, PatchTarget, build_dataset, masks_to_H, split

__all__ = [
    "GLOBAL_CONCEPTS", "SHAPES", "LabeledSample", "ShapeConceptsSpec", "ConceptDataset",
    "PatchTarget", "annotate_cmnist", "build_cmnist_dataset", "build_dataset", "class_from_masks", "encode_idx",
    "generate_sample", "generate_shapeconcepts", "load_cache", "load_idx", "masks_to_H",
    "parse_idx", "rasterize", "save_cache", "split", "synth_idx",
]
