"""Synthetic biventricular shape family.

A fixed-topology template (structured sheets for LV endocardium, outer
wall, RV cavity, plus a basal ring band) carries per-vertex ventricular
coordinates and surface tags; per-shape geometry is evaluated analytically
from a handful of size parameters, so every generated shape is in exact
template correspondence.
"""

from .frames import CardiacFrame, apply_frame, cardiac_frame, invert_frame
from .labeling import AnatomicalLabel, Labeler, label_point, label_points
from .plyio import read_landmarks, read_mesh_ply, write_landmarks, write_mesh_ply
from .shapes import (
    InstanceMesh,
    ShapeParams,
    default_params,
    generate_shape,
    mean_shape,
    myocardial_interior_point,
    sample_params,
)
from .template import (
    SURFACE_TAGS,
    TemplateSpec,
    TemplateTopology,
    assign_uvc,
    build_template,
)

__all__ = [
    "AnatomicalLabel",
    "CardiacFrame",
    "InstanceMesh",
    "Labeler",
    "ShapeParams",
    "SURFACE_TAGS",
    "TemplateSpec",
    "TemplateTopology",
    "apply_frame",
    "assign_uvc",
    "build_template",
    "cardiac_frame",
    "default_params",
    "generate_shape",
    "invert_frame",
    "label_point",
    "label_points",
    "mean_shape",
    "myocardial_interior_point",
    "read_landmarks",
    "read_mesh_ply",
    "sample_params",
    "write_landmarks",
    "write_mesh_ply",
]
