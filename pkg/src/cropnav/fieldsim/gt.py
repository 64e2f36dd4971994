"""Ground-truth projections used by evaluation and tests.

Maps the field's nominal row lines into a camera view to obtain, per row,
the image x at which the row crosses the bottom edge; the reference that
detected crop-row lines are scored against.
"""

from __future__ import annotations

import numpy as np

from .camera import CameraModel, Pose, project_points
from .field import FieldMap


def row_bottom_intersection(polyline, pose: Pose, cam: CameraModel, side="front"):
    """Image x where a world polyline crosses the image bottom edge.

    Returns None when the polyline does not cross v = H in front of the
    camera.  The crossing is refined by resampling the bracketing segment,
    so the result is exact to well under a pixel for straight rows.
    """
    pts = np.asarray(polyline, dtype=np.float64)
    h = float(cam.height_px)

    def crossing(p):
        uv, valid = project_points(p, pose, cam, side)
        vs = uv[:, 1]
        for i in range(len(p) - 1):
            if not (valid[i] and valid[i + 1]):
                continue
            if (vs[i] - h) * (vs[i + 1] - h) <= 0.0 and vs[i] != vs[i + 1]:
                return i
        return None

    i = crossing(pts)
    if i is None:
        return None
    seg = pts[i : i + 2]
    for _ in range(3):  # refine to ~mm ground resolution
        fine = np.linspace(seg[0], seg[1], 33)
        j = crossing(fine)
        if j is None:
            break
        seg = fine[j : j + 2]
    uv, valid = project_points(seg, pose, cam, side)
    v0, v1 = uv[0, 1], uv[1, 1]
    t = (h - v0) / (v1 - v0)
    return float(uv[0, 0] + t * (uv[1, 0] - uv[0, 0]))


def visible_row_intersections(fmap: FieldMap, pose: Pose, cam: CameraModel, side="front"):
    """{row id: bottom-edge image x} for rows crossing the bottom in view."""
    out = {}
    for row_id, poly in enumerate(fmap.row_polylines):
        u = row_bottom_intersection(poly, pose, cam, side)
        if u is not None and 0.0 <= u < cam.width:
            out[row_id] = u
    return out
