"""Concept-aligned vision transformer with multi-scale deformable fusion."""
