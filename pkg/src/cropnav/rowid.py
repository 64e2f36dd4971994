"""Descriptor-based row identity for visual lane switching.

While the robot slides sideways across rows, one detected row line is
monitored through a parallelogram corridor; its texture is summarized by
gradient-orientation-histogram descriptors at corner keypoints (a
SIFT-like stand-in without scale or rotation handling, which the fixed
camera geometry makes unnecessary).  The stored set G is matched against
the current set G*; a persistent jump of the mean match distance D above
the crop-specific threshold tau_c means a new row has entered the
monitored corridor, which is exactly one crossed row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

PATCH = 16  # descriptor support, pixels
GRID = 4  # spatial cells per axis
ORI_BINS = 8
DESCRIPTOR_LEN = GRID * GRID * ORI_BINS
_CLIP = 0.2  # SIFT-style component clipping before renormalization
_STRENGTH_REL = 0.01  # corner strength floor, relative to the ROI max


class EmptyRegion(Exception):
    """No keypoints found inside the region (uniform texture)."""


class InsufficientMatches(Exception):
    """Fewer retained matches than min_matches."""


@dataclass(frozen=True)
class SwitchThresholds:
    match_ratio: float = 0.8  # Lowe ratio-test lambda
    tau_c: float = 0.25  # crop-profile decision threshold on D
    persistence: int = 3  # consecutive differing frames before an event
    min_matches: int = 8
    max_keypoints: int = 200
    # keypoints come from a corridor no wider than this, so the set never
    # bleeds into a neighboring row at narrow spacings
    extract_halfwidth: float = 50.0

    def validate(self):
        if not 0.0 < self.match_ratio < 1.0:
            raise ValueError("match_ratio must lie in (0, 1)")
        if self.tau_c <= 0:
            raise ValueError("tau_c must be positive")
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        if self.min_matches < 1:
            raise ValueError("min_matches must be >= 1")


@dataclass
class DescriptorSet:
    keypoints: np.ndarray  # (N, 2) pixel x, y
    descriptors: np.ndarray  # (N, 128) unit-normalized float32


def luminance(img):
    rgb = np.asarray(img, dtype=np.float64)
    return 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]


def _box_sum(a, radius):
    """Uniform box filter sum over (2*radius+1)^2 neighborhoods."""
    ap = np.pad(a, radius, mode="edge")
    ii = np.zeros((ap.shape[0] + 1, ap.shape[1] + 1))
    ii[1:, 1:] = ap.cumsum(axis=0).cumsum(axis=1)
    k = 2 * radius + 1
    return ii[k:, k:] + ii[:-k, :-k] - ii[:-k, k:] - ii[k:, :-k]


def _corner_strength(gx, gy):
    """Shi-Tomasi minimum eigenvalue of the box-smoothed structure tensor."""
    ixx = _box_sum(gx * gx, 2)
    iyy = _box_sum(gy * gy, 2)
    ixy = _box_sum(gx * gy, 2)
    tr = ixx + iyy
    det_part = np.sqrt(np.maximum((ixx - iyy) ** 2 + 4.0 * ixy * ixy, 0.0))
    return 0.5 * (tr - det_part)


def _gradients(gray):
    gx = np.zeros_like(gray)
    gy = np.zeros_like(gray)
    gx[:, 1:-1] = 0.5 * (gray[:, 2:] - gray[:, :-2])
    gy[1:-1, :] = 0.5 * (gray[2:, :] - gray[:-2, :])
    return gx, gy


_PATCH_WINDOW = None


def _patch_window():
    """Gaussian weight over the patch, easing sensitivity to small shifts."""
    global _PATCH_WINDOW
    if _PATCH_WINDOW is None:
        r = np.arange(PATCH) - (PATCH - 1) / 2.0
        g = np.exp(-(r**2) / (2.0 * (PATCH / 2.0) ** 2))
        _PATCH_WINDOW = g[:, None] * g[None, :]
    return _PATCH_WINDOW


def _descriptors_at(gx, gy, pts):
    """128-vector per keypoint: GRIDxGRID cells of ORI_BINS magnitude sums."""
    half = PATCH // 2
    n = len(pts)
    desc = np.zeros((n, GRID, GRID, ORI_BINS))
    mag = np.hypot(gx, gy)
    ori = np.arctan2(gy, gx)
    bins = np.floor((ori + np.pi) / (2.0 * np.pi) * ORI_BINS).astype(np.int64) % ORI_BINS
    cell = PATCH // GRID
    win = _patch_window()
    for i, (x, y) in enumerate(pts):
        x0, y0 = int(x) - half, int(y) - half
        m = mag[y0 : y0 + PATCH, x0 : x0 + PATCH] * win
        b = bins[y0 : y0 + PATCH, x0 : x0 + PATCH]
        for cy in range(GRID):
            for cx in range(GRID):
                ms = m[cy * cell : (cy + 1) * cell, cx * cell : (cx + 1) * cell]
                bs = b[cy * cell : (cy + 1) * cell, cx * cell : (cx + 1) * cell]
                desc[i, cy, cx] = np.bincount(bs.ravel(), weights=ms.ravel(), minlength=ORI_BINS)
    d = desc.reshape(n, DESCRIPTOR_LEN)
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    d = d / np.maximum(norm, 1e-12)
    d = np.minimum(d, _CLIP)
    norm = np.linalg.norm(d, axis=1, keepdims=True)
    return (d / np.maximum(norm, 1e-12)).astype(np.float32)


def extract_set(img, tracker, cfg, thresholds: SwitchThresholds):
    """DescriptorSet of the corridor of ``tracker`` inside ``img``.

    cfg supplies image_height/width (a rowtrack.TrackConfig works); raises
    EmptyRegion when no corner clears the strength floor inside the region.
    """
    gray = luminance(img) if img.ndim == 3 else np.asarray(img, dtype=np.float64)
    h, w = gray.shape
    halfwidth = min(tracker.halfwidth, thresholds.extract_halfwidth)
    ys = np.arange(h, dtype=np.float64)
    line_x = tracker.x_at(ys, cfg.image_height)
    u0 = int(np.clip(np.floor(line_x.min() - halfwidth), 0, w))
    u1 = int(np.clip(np.ceil(line_x.max() + halfwidth) + 1, 0, w))
    if u1 - u0 < PATCH + 2:
        raise EmptyRegion("corridor too narrow inside the image")
    roi = gray[:, u0:u1]
    gx, gy = _gradients(roi)
    strength = _corner_strength(gx, gy)

    margin = PATCH // 2 + 1
    interior = np.zeros_like(strength, dtype=bool)
    interior[margin:-margin, margin:-margin] = True
    xs = np.arange(u0, u1, dtype=np.float64)
    inside = np.abs(xs[None, :] - line_x[:, None]) <= halfwidth
    cand = interior & inside
    # 3x3 non-max suppression on corner strength
    s = strength
    local_max = np.ones_like(s, dtype=bool)
    local_max[1:, :] &= s[1:, :] >= s[:-1, :]
    local_max[:-1, :] &= s[:-1, :] > s[1:, :]
    local_max[:, 1:] &= s[:, 1:] >= s[:, :-1]
    local_max[:, :-1] &= s[:, :-1] > s[:, 1:]
    cand &= local_max & (s >= _STRENGTH_REL * max(s.max(), 1e-12)) & (s > 1e-9)
    yy, xx = np.nonzero(cand)
    if len(yy) == 0:
        raise EmptyRegion("no keypoints inside the region")
    order = np.argsort(-s[yy, xx], kind="stable")[: thresholds.max_keypoints]
    yy, xx = yy[order], xx[order]
    pts_roi = np.column_stack([xx, yy])
    desc = _descriptors_at(gx, gy, pts_roi)
    keypoints = np.column_stack([xx + u0, yy]).astype(np.float64)
    return DescriptorSet(keypoints=keypoints, descriptors=desc)


def match_sets(g, g_star, thresholds: SwitchThresholds):
    """Ratio-test filtered nearest-neighbor matches from g into g_star.

    Returns a list of (query index, reference index, distance); the
    reference side is one-to-one (closest query wins).
    """
    if len(g.descriptors) == 0 or len(g_star.descriptors) == 0:
        raise EmptyRegion("cannot match against an empty descriptor set")
    a = g.descriptors.astype(np.float64)
    b = g_star.descriptors.astype(np.float64)
    d2 = np.maximum(
        (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T), 0.0
    )
    d = np.sqrt(d2)
    pairs = []
    for i in range(len(a)):
        row = d[i]
        j = int(np.argmin(row))
        d1 = row[j]
        if len(row) > 1:
            row2 = row.copy()
            row2[j] = np.inf
            d2nd = row2.min()
        else:
            d2nd = np.inf
        if d1 < thresholds.match_ratio * d2nd:
            pairs.append((i, j, float(d1)))
    best = {}
    for i, j, dist in pairs:
        if j not in best or dist < best[j][2]:
            best[j] = (i, j, dist)
    return sorted(best.values())


def similarity_distance(matches, thresholds: SwitchThresholds):
    """Mean Euclidean distance over the retained matches (Omega)."""
    if len(matches) < thresholds.min_matches:
        raise InsufficientMatches(f"{len(matches)} matches < min {thresholds.min_matches}")
    return float(np.mean([m[2] for m in matches]))


@dataclass
class NewRowEvent:
    frame: int
    anchor_y: float  # lateral world coordinate of the view anchor
    robot_y: float
    distance: float  # D that triggered the event


@dataclass
class NewRowMonitor:
    """Emits one event per crop row crossed during lateral motion.

    ``entering_sign`` tells which image side new rows enter from (+1 right,
    -1 left); the monitored row is the detected line nearest the image
    center on that side, so its identity changes exactly when a row's
    bottom intersection crosses the image center column.  A change is
    accepted after ``persistence`` consecutive frames with D above tau_c
    (or with too few matches), then the stored set is replaced.
    """

    thresholds: SwitchThresholds
    cfg: object  # anything with image_width / image_height (TrackConfig)
    entering_sign: int
    stored: DescriptorSet = None
    differ_count: int = 0
    skipped_frames: int = 0
    events: list = field(default_factory=list)

    def monitored_tracker(self, trackers):
        cx = self.cfg.image_width / 2.0
        side = [
            t for t in trackers if (t.ix - cx) * self.entering_sign >= 0.0 and not t.lost
        ]
        if not side:
            return None
        return min(side, key=lambda t: abs(t.ix - cx))

    def update(self, frame, img, trackers, anchor_y=None, robot_y=None):
        """Feed one frame; returns the NewRowEvent if one fired, else None."""
        tracker = self.monitored_tracker(trackers)
        if tracker is None:
            self.skipped_frames += 1
            return None
        try:
            current = extract_set(img, tracker, self.cfg, self.thresholds)
        except EmptyRegion:
            self.skipped_frames += 1
            return None
        if self.stored is None:
            self.stored = current
            self.differ_count = 0
            return None
        try:
            d = similarity_distance(match_sets(self.stored, current, self.thresholds), self.thresholds)
            differs = d > self.thresholds.tau_c
        except (InsufficientMatches, EmptyRegion):
            d = math.inf
            differs = True
        if differs:
            self.differ_count += 1
            if self.differ_count >= self.thresholds.persistence:
                event = NewRowEvent(
                    frame=frame,
                    anchor_y=float("nan") if anchor_y is None else float(anchor_y),
                    robot_y=float("nan") if robot_y is None else float(robot_y),
                    distance=d,
                )
                self.events.append(event)
                self.stored = current
                self.differ_count = 0
                return event
        else:
            self.differ_count = 0
        return None


def write_calibration_csv(path, rows):
    """rows: (crop_profile, mu_pos, sigma_pos, mu_neg, sigma_neg, tau_c)."""
    with open(path, "w") as f:
        f.write("crop_profile,mu_pos,sigma_pos,mu_neg,sigma_neg,tau_c\n")
        for r in rows:
            f.write("%s,%.4f,%.4f,%.4f,%.4f,%.4f\n" % tuple(r))
