"""Synthetic row-crop field generation and ground-truth queries.

A field is a set of lanes, each holding ``rows_per_lane`` parallel crop
rows; row lines are spaced uniformly across the whole field so adjacent
lanes share the planting pitch.  Plants sit on a nominal grid along each
row with Gaussian jitter, optional germination gaps, per-plant canopy
radius and a texture seed that keys the rendered canopy pattern.  Weeds
are scattered uniformly over the inter-row soil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .camera import Pose

# Wavelength of the lateral row sinusoid; FieldSpec only exposes its
# amplitude, one bend per ~dozen meters is typical of machine seeding.
_WAVE_LENGTH_M = 12.0
_CENTERLINE_STEP_M = 0.25
_ALONG_JITTER_STD_M = 0.02
_LATERAL_JITTER_STD_M = 0.008
_WEED_RADIUS_FACTOR = 0.8
_MIN_RADIUS_M = 0.015


class FieldSpecError(ValueError):
    """A FieldSpec field violates its validity range."""


@dataclass(frozen=True)
class FieldSpec:
    rows_per_lane: int = 2
    row_spacing: float = 0.55
    plant_spacing: float = 0.25
    row_length: float = 12.0
    lane_count: int = 2
    germination_rate: float = 1.0
    weed_density: float = 0.0
    canopy_radius_mean: float = 0.055
    canopy_radius_std: float = 0.012
    row_waviness: float = 0.0
    rng_seed: int = 0

    def validate(self):
        def bad(name, why):
            raise FieldSpecError(f"{name}: {why}")

        if self.rows_per_lane < 1:
            bad("rows_per_lane", "must be >= 1")
        if self.row_spacing <= 0:
            bad("row_spacing", "must be > 0")
        if self.plant_spacing <= 0:
            bad("plant_spacing", "must be > 0")
        if self.row_length <= 0:
            bad("row_length", "must be > 0")
        if self.lane_count < 1:
            bad("lane_count", "must be >= 1")
        if not 0.0 <= self.germination_rate <= 1.0:
            bad("germination_rate", "must lie in [0, 1]")
        if self.weed_density < 0:
            bad("weed_density", "must be >= 0")
        if self.canopy_radius_mean <= 0:
            bad("canopy_radius_mean", "must be > 0")
        if self.canopy_radius_std < 0:
            bad("canopy_radius_std", "must be >= 0")
        if self.row_waviness < 0:
            bad("row_waviness", "must be >= 0")


@dataclass
class FieldMap:
    """Ground truth world model; all per-plant data in parallel arrays."""

    spec: FieldSpec
    # plants: world x, y (m), canopy radius (m), texture seed, row id, lane id
    plant_xy: np.ndarray
    plant_radius: np.ndarray
    plant_texseed: np.ndarray
    plant_row: np.ndarray
    plant_lane: np.ndarray
    weed_xy: np.ndarray
    weed_radius: np.ndarray
    weed_texseed: np.ndarray
    lane_centerlines: list = field(default_factory=list)
    row_polylines: list = field(default_factory=list)

    @property
    def lane_count(self):
        return len(self.lane_centerlines)

    def row_end_x(self, row_id=None):
        """Largest plant x; with a row id, largest x within that row."""
        if row_id is None:
            return float(self.plant_xy[:, 0].max())
        sel = self.plant_row == row_id
        return float(self.plant_xy[sel, 0].max())


def _row_lateral(spec: FieldSpec, row_id, xs, phase):
    base = row_id * spec.row_spacing
    if spec.row_waviness == 0.0:
        return np.full_like(np.asarray(xs, dtype=np.float64), base)
    xs = np.asarray(xs, dtype=np.float64)
    return base + spec.row_waviness * np.sin(2.0 * np.pi * xs / _WAVE_LENGTH_M + phase)


def generate_field(spec: FieldSpec) -> FieldMap:
    """Deterministically expand a FieldSpec into a FieldMap."""
    spec.validate()
    rng = np.random.default_rng(spec.rng_seed)
    n_rows = spec.lane_count * spec.rows_per_lane
    # one waviness phase per lane, drawn up front so plant draws stay aligned
    lane_phase = rng.uniform(0.0, 2.0 * np.pi, size=spec.lane_count)

    n_sites = int(math.floor(spec.row_length / spec.plant_spacing + 1e-9)) + 1
    site_x = np.arange(n_sites) * spec.plant_spacing
    lateral_bound = spec.canopy_radius_mean + 4.0 * spec.canopy_radius_std

    xs, ys, radii, seeds, rows, lanes = [], [], [], [], [], []
    for lane in range(spec.lane_count):
        for r in range(spec.rows_per_lane):
            row_id = lane * spec.rows_per_lane + r
            keep = rng.random(n_sites) < spec.germination_rate
            dx = np.clip(rng.normal(0.0, _ALONG_JITTER_STD_M, n_sites), -0.06, 0.06)
            dy = np.clip(
                rng.normal(0.0, _LATERAL_JITTER_STD_M, n_sites),
                -0.99 * lateral_bound,
                0.99 * lateral_bound,
            )
            rad = np.maximum(
                _MIN_RADIUS_M, rng.normal(spec.canopy_radius_mean, spec.canopy_radius_std, n_sites)
            )
            tex = rng.integers(0, 2**31 - 1, n_sites)
            px = site_x + dx
            py = _row_lateral(spec, row_id, px, lane_phase[lane]) + dy
            xs.append(px[keep])
            ys.append(py[keep])
            radii.append(rad[keep])
            seeds.append(tex[keep])
            rows.append(np.full(int(keep.sum()), row_id, dtype=np.int64))
            lanes.append(np.full(int(keep.sum()), lane, dtype=np.int64))

    plant_xy = np.column_stack([np.concatenate(xs), np.concatenate(ys)]) if xs else np.empty((0, 2))
    plant_radius = np.concatenate(radii) if radii else np.empty(0)
    plant_texseed = np.concatenate(seeds) if seeds else np.empty(0, dtype=np.int64)
    plant_row = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    plant_lane = np.concatenate(lanes) if lanes else np.empty(0, dtype=np.int64)

    # weeds: uniform over the soil band, keeping clear of the row lines
    band_lo = -spec.row_spacing / 2.0
    band_hi = (n_rows - 1) * spec.row_spacing + spec.row_spacing / 2.0
    area = spec.row_length * (band_hi - band_lo)
    n_weeds = int(rng.poisson(spec.weed_density * area))
    wx = rng.uniform(0.0, spec.row_length, n_weeds)
    wy = rng.uniform(band_lo, band_hi, n_weeds)
    wrad = np.maximum(
        _MIN_RADIUS_M,
        _WEED_RADIUS_FACTOR * rng.normal(spec.canopy_radius_mean, spec.canopy_radius_std, n_weeds),
    )
    wtex = rng.integers(0, 2**31 - 1, n_weeds)
    clearance = 1.5 * spec.canopy_radius_mean + 0.02
    keep_w = np.ones(n_weeds, dtype=bool)
    for row_id in range(n_rows):
        lane = row_id // spec.rows_per_lane
        row_y = _row_lateral(spec, row_id, wx, lane_phase[lane])
        keep_w &= np.abs(wy - row_y) > clearance

    row_polylines = []
    sample_x = np.arange(0.0, spec.row_length + _CENTERLINE_STEP_M / 2, _CENTERLINE_STEP_M)
    for row_id in range(n_rows):
        lane = row_id // spec.rows_per_lane
        ry = _row_lateral(spec, row_id, sample_x, lane_phase[lane])
        row_polylines.append(np.column_stack([sample_x, ry]))

    lane_centerlines = []
    for lane in range(spec.lane_count):
        members = row_polylines[lane * spec.rows_per_lane : (lane + 1) * spec.rows_per_lane]
        cy = np.mean([p[:, 1] for p in members], axis=0)
        lane_centerlines.append(np.column_stack([sample_x, cy]))

    return FieldMap(
        spec=spec,
        plant_xy=plant_xy,
        plant_radius=plant_radius,
        plant_texseed=plant_texseed.astype(np.int64),
        plant_row=plant_row,
        plant_lane=plant_lane,
        weed_xy=np.column_stack([wx[keep_w], wy[keep_w]]) if n_weeds else np.empty((0, 2)),
        weed_radius=wrad[keep_w] if n_weeds else np.empty(0),
        weed_texseed=wtex[keep_w].astype(np.int64) if n_weeds else np.empty(0, dtype=np.int64),
        lane_centerlines=lane_centerlines,
        row_polylines=row_polylines,
    )


def polyline_distance(point, polyline):
    """Distance, tangent angle and interior flag of the closest polyline point."""
    p = np.asarray(point, dtype=np.float64)
    a = polyline[:-1]
    b = polyline[1:]
    ab = b - a
    seg_len2 = np.einsum("ij,ij->i", ab, ab)
    seg_len2 = np.where(seg_len2 == 0.0, 1e-300, seg_len2)
    t = np.einsum("ij,ij->i", p - a, ab) / seg_len2
    tc = np.clip(t, 0.0, 1.0)
    closest = a + tc[:, None] * ab
    d2 = np.einsum("ij,ij->i", p - closest, p - closest)
    i = int(np.argmin(d2))
    tangent = math.atan2(ab[i, 1], ab[i, 0])
    clamped_start = i == 0 and t[i] <= 0.0
    clamped_end = i == len(a) - 1 and t[i] >= 1.0
    return float(math.sqrt(d2[i])), tangent, not (clamped_start or clamped_end)


def ground_truth_errors(pose: Pose, fmap: FieldMap, lane_id: int):
    """(lateral deviation cm, heading error deg in [0, 90]) vs the lane centerline."""
    if not 0 <= lane_id < fmap.lane_count:
        raise KeyError(f"unknown lane id {lane_id}")
    dist, tangent, _ = polyline_distance((pose.x, pose.y), fmap.lane_centerlines[lane_id])
    err = abs(pose.theta - tangent) % math.pi
    err = min(err, math.pi - err)
    return dist * 100.0, math.degrees(err)


def save_fieldmap(fmap: FieldMap, path):
    """Line-oriented plain-text serialization (format: ``fieldmap v1``)."""
    lines = ["fieldmap v1"]
    for i in range(len(fmap.plant_xy)):
        lines.append(
            "P %.6f %.6f %.6f %d %d %d"
            % (
                fmap.plant_xy[i, 0],
                fmap.plant_xy[i, 1],
                fmap.plant_radius[i],
                fmap.plant_texseed[i],
                fmap.plant_row[i],
                fmap.plant_lane[i],
            )
        )
    for i in range(len(fmap.weed_xy)):
        lines.append(
            "W %.6f %.6f %.6f %d"
            % (fmap.weed_xy[i, 0], fmap.weed_xy[i, 1], fmap.weed_radius[i], fmap.weed_texseed[i])
        )
    for lane, poly in enumerate(fmap.lane_centerlines):
        coords = " ".join("%.6f %.6f" % (x, y) for x, y in poly)
        lines.append(f"C {lane} {coords}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as f:
        f.write(text)
    return text


def load_fieldmap(path) -> FieldMap:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not lines or lines[0] != "fieldmap v1":
        raise ValueError(f"{path}: not a fieldmap v1 file")
    plants, weeds, centers = [], [], {}
    for ln in lines[1:]:
        parts = ln.split()
        if parts[0] == "P":
            plants.append([float(v) for v in parts[1:4]] + [int(v) for v in parts[4:7]])
        elif parts[0] == "W":
            weeds.append([float(v) for v in parts[1:4]] + [int(parts[4])])
        elif parts[0] == "C":
            vals = [float(v) for v in parts[2:]]
            centers[int(parts[1])] = np.array(vals).reshape(-1, 2)
        else:
            raise ValueError(f"{path}: unknown record {parts[0]!r}")
    p = np.array(plants) if plants else np.empty((0, 6))
    w = np.array(weeds) if weeds else np.empty((0, 4))
    return FieldMap(
        spec=FieldSpec(),
        plant_xy=p[:, :2],
        plant_radius=p[:, 2],
        plant_texseed=p[:, 3].astype(np.int64),
        plant_row=p[:, 4].astype(np.int64),
        plant_lane=p[:, 5].astype(np.int64),
        weed_xy=w[:, :2],
        weed_radius=w[:, 2] if len(w) else np.empty(0),
        weed_texseed=w[:, 3].astype(np.int64) if len(w) else np.empty(0, dtype=np.int64),
        lane_centerlines=[centers[k] for k in sorted(centers)],
        row_polylines=[],
    )
