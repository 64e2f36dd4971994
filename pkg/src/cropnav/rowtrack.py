"""Frame-to-frame tracking of detected crop-row lines.

Each row is wrapped in a parallelogram corridor: the set of pixels within
a horizontal half-width of the line, spanning the full image height, with
sides parallel to the line.  Every new frame the line is refit from the
plant centers inside its corridor at the previous position; corridors
without support hold their line and are dropped as Lost after
``lost_after`` consecutive unsupported frames.

Two complementary end-of-lane predicates come from the same corridors.
The receded predicate (``end_of_row``) is true once every corridor center
sits in the far half of a view the lane is receding from; the mirrored
``lane_end_ahead`` fires on the travel-facing camera when its far half
runs empty because the lane is about to end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .rowdetect import DegenerateFit, fit_line
from .vegetation import region_centers

CANOPY_WIDTH_FACTOR = 1.5
MIN_HALFWIDTH = 40.0
LOST_AFTER = 15  # frames (1 s at 15 fps)


class NoTrackers(Exception):
    """No rows to initialize from, or every tracker is Lost."""


@dataclass(frozen=True)
class TrackConfig:
    image_width: int = 1280
    image_height: int = 720
    canopy_width_factor: float = CANOPY_WIDTH_FACTOR
    min_halfwidth: float = MIN_HALFWIDTH
    # corridors never grow past this: continuous canopies yield wide
    # regions whose median width would otherwise swallow neighbor rows
    max_halfwidth: float = 110.0
    lost_after: int = LOST_AFTER
    max_region_height: int = 90
    min_region_area: int = 30


@dataclass(frozen=True)
class RowTracker:
    ix: float  # bottom intersection x
    slope: float
    phi_deg: float
    halfwidth: float
    unsupported: int = 0
    lost: bool = False

    def x_at(self, y, image_height):
        return self.ix + self.slope * (np.asarray(y, dtype=np.float64) - image_height)

    def contains(self, centers, image_height):
        """Mask of centers inside the corridor."""
        c = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
        if len(c) == 0:
            return np.zeros(0, dtype=bool)
        return np.abs(c[:, 0] - self.x_at(c[:, 1], image_height)) <= self.halfwidth


@dataclass(frozen=True)
class GuidanceFeature:
    """L = [a, H/2, theta]: bottom-intersection offset and mean line angle."""

    a_px: float
    theta_deg: float

    @property
    def theta_rad(self):
        return math.radians(self.theta_deg)

    def mirrored(self):
        return GuidanceFeature(-self.a_px, -self.theta_deg)


def estimate_halfwidth(row, regions, cfg: TrackConfig):
    """Half-width from the median bbox width of regions near the line."""
    widths = []
    for r in regions:
        line_x = row.ix + row.slope * (r.center[1] - cfg.image_height)
        if abs(r.center[0] - line_x) <= cfg.min_halfwidth:
            widths.append(r.width)
    if not widths:
        return cfg.min_halfwidth
    return min(
        cfg.max_halfwidth, max(cfg.min_halfwidth, cfg.canopy_width_factor * float(np.median(widths)))
    )


def init_trackers(rows, regions, cfg: TrackConfig):
    if not rows:
        raise NoTrackers("cannot initialize trackers from an empty row set")
    return [
        RowTracker(
            ix=r.ix,
            slope=r.slope,
            phi_deg=r.phi_deg,
            halfwidth=estimate_halfwidth(r, regions, cfg),
        )
        for r in rows
    ]


def update_trackers(trackers, regions, cfg: TrackConfig):
    """Refit each corridor on the centers it contains; hold and age otherwise."""
    centers = region_centers(regions)
    out = []
    for t in trackers:
        if t.lost:
            out.append(t)
            continue
        inside = t.contains(centers, cfg.image_height)
        if int(inside.sum()) >= 2:
            try:
                c, m = fit_line(centers[inside], cfg.image_height)
            except DegenerateFit:
                c = m = None
            if c is not None and 0.0 <= c < cfg.image_width:
                out.append(
                    replace(
                        t,
                        ix=c,
                        slope=m,
                        phi_deg=math.degrees(math.atan(m)),
                        unsupported=0,
                        lost=False,
                    )
                )
                continue
        n = t.unsupported + 1
        out.append(replace(t, unsupported=n, lost=n >= cfg.lost_after))
    return out


def _corridor_center_ys(trackers, regions, cfg: TrackConfig):
    centers = region_centers(regions)
    ys = []
    supported = 0
    for t in trackers:
        if t.lost:
            continue
        inside = t.contains(centers, cfg.image_height)
        if inside.any():
            supported += 1
            ys.append(centers[inside, 1])
    return supported, (np.concatenate(ys) if ys else np.empty(0))


def end_of_row(trackers, regions, cfg: TrackConfig):
    """True when the lane has receded into the far half of the view.

    Every center inside every live corridor must sit in the top half of the
    image (y < H/2) and at least one corridor must still hold a center, so
    a blank frame never fires.
    """
    supported, ys = _corridor_center_ys(trackers, regions, cfg)
    if supported == 0:
        return False
    return bool((ys < cfg.image_height / 2.0).all())


def lane_end_ahead(trackers, regions, cfg: TrackConfig):
    """Mirror predicate for the travel-facing camera: far half empty.

    True when corridors still hold centers but all of them sit in the near
    (bottom) half, i.e. the visible lane runs out ahead.
    """
    supported, ys = _corridor_center_ys(trackers, regions, cfg)
    if supported == 0:
        return False
    return bool((ys >= cfg.image_height / 2.0).all())


def average_line(trackers, cfg: TrackConfig):
    """Unweighted mean feature over non-Lost trackers."""
    live = [t for t in trackers if not t.lost]
    if not live:
        raise NoTrackers("all trackers lost")
    a = float(np.mean([t.ix for t in live])) - cfg.image_width / 2.0
    theta = float(np.mean([t.phi_deg for t in live]))
    return GuidanceFeature(a_px=a, theta_deg=theta)


def write_telemetry_header(f):
    f.write("frame,row_idx,I_x,phi_deg,support,lost,end_of_row,a_px,theta_deg\n")


def write_telemetry_rows(f, frame, trackers, regions, cfg: TrackConfig, eor, feature):
    centers = region_centers(regions)
    for i, t in enumerate(trackers):
        support = int(t.contains(centers, cfg.image_height).sum()) if len(centers) else 0
        f.write(
            "%d,%d,%.3f,%.4f,%d,%d,%d,%.3f,%.4f\n"
            % (
                frame,
                i,
                t.ix,
                t.phi_deg,
                support,
                t.lost,
                eor,
                feature.a_px if feature else float("nan"),
                feature.theta_deg if feature else float("nan"),
            )
        )
