"""Robot pose and tilted pinhole camera geometry.

Frames
------
World: x along the crop rows, y across them (lane index grows with +y),
z up, ground plane z = 0.  Robot: x forward, y left, z up; pose is
(x, y, theta) with theta measured counter-clockwise from world +x.

Cameras are mounted symmetrically fore and aft of the robot's rotation
center at height ``height_m``, offset ``mount_offset_m`` along robot x,
and tilted ``tilt_deg`` away from nadir toward their facing direction.
Image convention is the usual one for a forward-tilted camera: u grows
right, v grows down, near ground at the image bottom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FRONT = "front"
BACK = "back"

# Extrinsics are snapped so that poses which are equal up to floating-point
# round-off (e.g. theta vs theta+pi on the mirrored camera) produce bitwise
# identical camera frames, and therefore identical renders.
_POS_SNAP = 1e-9
_ROT_SNAP = 1e-12


class BehindCamera(Exception):
    """Projected point has non-positive depth (sentinel outcome)."""


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def wrapped(self):
        t = math.remainder(self.theta, 2.0 * math.pi)
        if t <= -math.pi:
            t += 2.0 * math.pi
        return Pose(self.x, self.y, t)


@dataclass(frozen=True)
class CameraModel:
    height_m: float = 1.0
    tilt_deg: float = 65.0
    mount_offset_m: float = 0.7
    width: int = 1280
    height_px: int = 720
    focal_px: float = 1280 / (2.0 * math.tan(math.radians(30.0)))

    def validate(self):
        if self.height_m <= 0:
            raise ValueError("camera height_m must be positive")
        if not 0.0 <= self.tilt_deg < 90.0:
            raise ValueError("camera tilt_deg must lie in [0, 90)")
        if self.width <= 0 or self.height_px <= 0:
            raise ValueError("camera image size must be positive")
        if self.focal_px <= 0:
            raise ValueError("camera focal_px must be positive")

    @property
    def cx(self):
        return self.width / 2.0

    @property
    def cy(self):
        return self.height_px / 2.0


def _axes_robot_frame(cam: CameraModel, side):
    """Camera axes expressed in the robot frame (columns x_cam, y_cam, z_cam)."""
    rho = math.radians(cam.tilt_deg)
    s, c = math.sin(rho), math.cos(rho)
    if side == FRONT:
        x_cam = (0.0, -1.0, 0.0)
        y_cam = (-c, 0.0, -s)
        z_cam = (s, 0.0, -c)
        offset = cam.mount_offset_m
    elif side == BACK:
        x_cam = (0.0, 1.0, 0.0)
        y_cam = (c, 0.0, -s)
        z_cam = (-s, 0.0, -c)
        offset = -cam.mount_offset_m
    else:
        raise ValueError(f"unknown camera side {side!r}")
    return np.array([x_cam, y_cam, z_cam]).T, offset


def camera_extrinsics(pose: Pose, cam: CameraModel, side=FRONT):
    """World-to-camera rotation and camera center, snapped for determinism.

    Returns (R_cw, C) with p_cam = R_cw @ (p_world - C).
    """
    axes_r, offset = _axes_robot_frame(cam, side)
    ct, st = math.cos(pose.theta), math.sin(pose.theta)
    rz = np.array([[ct, -st, 0.0], [st, ct, 0.0], [0.0, 0.0, 1.0]])
    axes_w = rz @ axes_r
    center = np.array([pose.x + ct * offset, pose.y + st * offset, cam.height_m])
    r_cw = np.round(axes_w.T / _ROT_SNAP) * _ROT_SNAP
    center = np.round(center / _POS_SNAP) * _POS_SNAP
    return r_cw, center


def project_points(points, pose: Pose, cam: CameraModel, side=FRONT):
    """Project world points (N,3) or ground points (N,2) to pixels.

    Returns (pixels (N,2), valid (N,)); pixels of invalid (behind-camera)
    points are NaN.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] == 2:
        pts = np.column_stack([pts, np.zeros(len(pts))])
    r_cw, center = camera_extrinsics(pose, cam, side)
    pc = (pts - center) @ r_cw.T
    valid = pc[:, 2] > 1e-9
    uv = np.full((len(pts), 2), np.nan)
    z = np.where(valid, pc[:, 2], 1.0)
    uv[:, 0] = cam.cx + cam.focal_px * pc[:, 0] / z
    uv[:, 1] = cam.cy + cam.focal_px * pc[:, 1] / z
    uv[~valid] = np.nan
    return uv, valid


def project_ground_point(point, pose: Pose, cam: CameraModel, side=FRONT):
    """Project one ground point; raises BehindCamera for non-positive depth."""
    uv, valid = project_points(np.asarray(point, dtype=np.float64)[None, :2], pose, cam, side)
    if not valid[0]:
        raise BehindCamera(f"ground point {tuple(point)} is behind the {side} camera")
    return float(uv[0, 0]), float(uv[0, 1])


def intrinsic_matrix(cam: CameraModel):
    return np.array(
        [[cam.focal_px, 0.0, cam.cx], [0.0, cam.focal_px, cam.cy], [0.0, 0.0, 1.0]]
    )


def ground_homography(pose: Pose, cam: CameraModel, side=FRONT):
    """3x3 map from ground (X, Y, 1) to homogeneous pixel coordinates."""
    r_cw, center = camera_extrinsics(pose, cam, side)
    h = np.column_stack([r_cw[:, 0], r_cw[:, 1], -r_cw @ center])
    return intrinsic_matrix(cam) @ h


def ground_from_pixels(pixels, pose: Pose, cam: CameraModel, side=FRONT):
    """Back-project pixels (N,2) onto the ground plane.

    Returns (ground (N,2), valid (N,)); invalid entries (rays at or above
    the horizon) are NaN.
    """
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim == 1:
        px = px[None, :]
    hinv = np.linalg.inv(ground_homography(pose, cam, side))
    homog = np.column_stack([px, np.ones(len(px))]) @ hinv.T
    w = homog[:, 2]
    valid = w > 1e-12
    out = np.full((len(px), 2), np.nan)
    out[valid] = homog[valid, :2] / w[valid, None]
    return out, valid


def bottom_center_ground(pose: Pose, cam: CameraModel, side=FRONT):
    """Ground point seen at the image bottom center: the guidance anchor."""
    g, valid = ground_from_pixels([(cam.cx, float(cam.height_px))], pose, cam, side)
    if not valid[0]:
        raise BehindCamera("image bottom center does not intersect the ground")
    return float(g[0, 0]), float(g[0, 1])
