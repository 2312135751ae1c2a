"""Structured deformable-box shape toolkit.

Shapes are sets of axis-aligned boxes, one per semantic part, each deformed
to follow its part's geometry.  The package covers template construction and
registration, per-vertex deformation features, structure extraction, the two
variational autoencoders, layout refinement and shape-set metrics.
"""

__version__ = "0.1.0"
