"""Synthetic row-crop world: field generation, camera geometry, rendering."""

from .camera import (
    BACK,
    FRONT,
    BehindCamera,
    CameraModel,
    Pose,
    bottom_center_ground,
    camera_extrinsics,
    ground_from_pixels,
    ground_homography,
    project_ground_point,
    project_points,
)
from .field import (
    FieldMap,
    FieldSpec,
    FieldSpecError,
    generate_field,
    ground_truth_errors,
    load_fieldmap,
    polyline_distance,
    save_fieldmap,
)
from .render import Renderer, make_canopy_tile, read_ppm, render_view, write_ppm

__all__ = [
    "BACK",
    "FRONT",
    "BehindCamera",
    "CameraModel",
    "FieldMap",
    "FieldSpec",
    "FieldSpecError",
    "Pose",
    "Renderer",
    "bottom_center_ground",
    "camera_extrinsics",
    "generate_field",
    "ground_from_pixels",
    "ground_homography",
    "ground_truth_errors",
    "load_fieldmap",
    "make_canopy_tile",
    "polyline_distance",
    "project_ground_point",
    "project_points",
    "read_ppm",
    "render_view",
    "save_fieldmap",
    "write_ppm",
]
