"""Vegetation segmentation and plant-region extraction.

RGB frame -> excess-green index -> Otsu binarization -> 4-connected
components.  Components taller than ``max_region_height`` are cut into
horizontal bands so a continuous canopy row still yields several center
points; each region is summarized by its pixel center of mass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

MAX_REGION_HEIGHT = 90  # H/8 at 720 rows: four bands across the scan band
MIN_REGION_AREA = 30


class NoSeparation(Exception):
    """Histogram mass sits in a single bin; no threshold separates it."""


@dataclass(frozen=True)
class PlantRegion:
    center: tuple  # (x, y) center of mass, pixels
    area: int
    bbox: tuple  # (x0, y0, w, h)

    @property
    def width(self):
        return self.bbox[2]

    @property
    def height(self):
        return self.bbox[3]


def exg_index(img):
    """Per-pixel excess green 2g - r - b on normalized channels, in [-1, 2]."""
    rgb = np.asarray(img, dtype=np.float64)
    s = rgb.sum(axis=2)
    safe = np.where(s > 0.0, s, 1.0)
    val = (2.0 * rgb[:, :, 1] - rgb[:, :, 0] - rgb[:, :, 2]) / safe
    return np.where(s > 0.0, val, 0.0)


def exg_u8(img):
    """Excess green affinely mapped from [-1, 2] to [0, 255], with histogram."""
    return _kernels.exg_u8_hist(np.ascontiguousarray(img, dtype=np.uint8))


def otsu_threshold(hist):
    """Threshold t in [1, 255] maximizing between-class variance of {<t, >=t}.

    Ties break toward the smallest t; raises NoSeparation when every count
    sits in one bin.
    """
    h = np.asarray(hist, dtype=np.float64)
    if h.sum() <= 0:
        raise ValueError("histogram is empty")
    if np.count_nonzero(h) <= 1:
        raise NoSeparation("all histogram mass in a single bin")
    bins = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(h)[:-1]  # mass below t for t = 1..255
    w1 = h.sum() - w0
    m0 = np.cumsum(h * bins)[:-1]
    m1 = (h * bins).sum() - m0
    valid = (w0 > 0) & (w1 > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bcv = np.where(valid, w0 * w1 * (m1 / np.where(w1 > 0, w1, 1) - m0 / np.where(w0 > 0, w0, 1)) ** 2, -1.0)
    return int(np.argmax(bcv)) + 1


def segment(img):
    """Binary vegetation mask: scaled ExG >= Otsu threshold (empty if no split)."""
    exg, hist = exg_u8(img)
    try:
        t = otsu_threshold(hist)
    except NoSeparation:
        return np.zeros(exg.shape, dtype=bool)
    return exg >= t


def extract_regions(mask, max_region_height=MAX_REGION_HEIGHT, min_area=MIN_REGION_AREA):
    """PlantRegions of a mask, deterministically ordered by (y0, x0, center)."""
    if max_region_height <= 0:
        raise ValueError("max_region_height must be positive")
    m = np.ascontiguousarray(mask.astype(np.uint8))
    centers, areas, bboxes = _kernels.label_regions(m, int(max_region_height), int(min_area))
    order = np.lexsort((centers[:, 0], centers[:, 1], bboxes[:, 0], bboxes[:, 1]))
    return [
        PlantRegion(
            center=(float(centers[i, 0]), float(centers[i, 1])),
            area=int(areas[i]),
            bbox=(int(bboxes[i, 0]), int(bboxes[i, 1]), int(bboxes[i, 2]), int(bboxes[i, 3])),
        )
        for i in order
    ]


def region_centers(regions):
    """(N, 2) array of region centers."""
    if not regions:
        return np.empty((0, 2))
    return np.array([r.center for r in regions])


def write_pbm(path, mask):
    """Binary portable bitmap (P4); 1 bits mark foreground."""
    h, w = mask.shape
    packed = np.packbits(mask.astype(np.uint8), axis=1)
    with open(path, "wb") as f:
        f.write(b"P4\n%d %d\n" % (w, h))
        f.write(packed.tobytes())


def write_regions_csv(path, regions):
    with open(path, "w") as f:
        f.write("center_x,center_y,area,bbox_x,bbox_y,bbox_w,bbox_h\n")
        for r in regions:
            f.write(
                "%.3f,%.3f,%d,%d,%d,%d,%d\n"
                % (r.center[0], r.center[1], r.area, r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3])
            )
