"""Camera-view rendering of a FieldMap.

The color model keeps each surface class on an exact chromaticity so the
excess-green segmentation downstream sees clean class histograms:

* soil: (4k, 3k, 2k) for an integer brightness k -> ExG exactly 0,
* sparse soil speckle: (4k, 3k + 2, 2k) -> ExG slightly positive,
* canopies: (2k, 5k, 2k) -> ExG exactly 2/3 regardless of k.

Texture therefore lives entirely in luminance: every plant carries a
value-noise tile keyed on its texture seed and sampled in plant-local
ground coordinates, which makes local appearance pose-invariant and
distinct between plants (what the lane-switch matcher relies on).
Canopies are painted far-to-near over the soil.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .. import _kernels
from .camera import (
    CameraModel,
    Pose,
    camera_extrinsics,
    ground_from_pixels,
    ground_homography,
    project_points,
)
from .field import FieldMap

_TILE = 32
_PLANT_MULTS = (2, 5, 2)  # green: ExG exactly 2/3
_SOIL_MULTS = (4, 3, 2)  # brown: ExG exactly 0
_PLANT_K_LO, _PLANT_K_HI = 12, 28
_SOIL_K_LO, _SOIL_K_HI = 28, 34
_SOIL_BLOCK = 8
_SOIL_CELL_M = 0.08
_SPECKLE_FRACTION = 0.002
_MAX_DEPTH_M = 9.5
_MIN_DEPTH_M = 0.15
# beyond this camera depth canopies lose their green chroma (the distance
# haze real segmentation suffers); their texture stays in luminance
FADE_DEPTH_M = 4.0


def _bilinear_upsample(grid, size):
    """Upsample a small float grid to size x size with edge-clamped bilinear."""
    n = grid.shape[0]
    pos = (np.arange(size) + 0.5) * n / size - 0.5
    i0 = np.clip(np.floor(pos).astype(int), 0, n - 1)
    i1 = np.clip(i0 + 1, 0, n - 1)
    f = np.clip(pos - i0, 0.0, 1.0)
    fr, fc = f[:, None], f[None, :]
    out = grid[np.ix_(i0, i0)] * (1 - fr) * (1 - fc)
    out += grid[np.ix_(i0, i1)] * (1 - fr) * fc
    out += grid[np.ix_(i1, i0)] * fr * (1 - fc)
    out += grid[np.ix_(i1, i1)] * fr * fc
    return out


def make_canopy_tile(texseed):
    """Value-noise brightness tile for one plant, uint8 k-values."""
    rng = np.random.default_rng(int(texseed))
    base = rng.uniform(_PLANT_K_LO, _PLANT_K_HI, (8, 8))
    tile = _bilinear_upsample(base, _TILE)
    return np.clip(np.rint(tile), _PLANT_K_LO, _PLANT_K_HI).astype(np.uint8)


def _soil_seed(field_seed, r_cw, center, cam: CameraModel):
    blob = (
        np.int64(field_seed).tobytes()
        + r_cw.tobytes()
        + center.tobytes()
        + np.int64(cam.width).tobytes()
        + np.int64(cam.height_px).tobytes()
    )
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


class Renderer:
    """Per-field renderer; caches canopy tiles across frames."""

    def __init__(self, fmap: FieldMap, cam: CameraModel):
        self.fmap = fmap
        self.cam = cam
        self._xy = np.vstack([fmap.plant_xy, fmap.weed_xy])
        self._radius = np.concatenate([fmap.plant_radius, fmap.weed_radius])
        seeds = np.concatenate([fmap.plant_texseed, fmap.weed_texseed])
        self._tiles = np.stack([make_canopy_tile(s) for s in seeds]) if len(seeds) else np.empty(
            (0, _TILE, _TILE), dtype=np.uint8
        )

    def _soil(self, pose, side, r_cw, center):
        """Brown-band soil: brightness keyed to world ground cells.

        Anchoring the bands to the ground (instead of the screen) keeps
        local appearance stable across consecutive frames, which the
        descriptor matching of the lane switch relies on; the sparse
        chroma speckle stays per-frame (isolated pixels never form
        regions), keeping the segmentation exercise honest.
        """
        cam = self.cam
        bh = cam.height_px // _SOIL_BLOCK + 1
        bw = cam.width // _SOIL_BLOCK + 1
        by, bx = np.mgrid[0:bh, 0:bw]
        pix = np.column_stack(
            [(bx.ravel() + 0.5) * _SOIL_BLOCK, (by.ravel() + 0.5) * _SOIL_BLOCK]
        )
        ground, valid = ground_from_pixels(pix, pose, cam, side)
        cell = np.zeros((len(pix), 2), dtype=np.int64)
        cell[valid] = np.floor(ground[valid] / _SOIL_CELL_M).astype(np.int64)
        hx = cell[:, 0].astype(np.uint64) * np.uint64(73856093)
        hy = cell[:, 1].astype(np.uint64) * np.uint64(19349663)
        hs = np.uint64(np.int64(self.fmap.spec.rng_seed)) * np.uint64(83492791)
        h = hx ^ hy ^ hs
        h ^= h >> np.uint64(13)
        h *= np.uint64(0x9E3779B97F4A7C15)
        h ^= h >> np.uint64(7)
        span = np.uint64(_SOIL_K_HI - _SOIL_K_LO + 1)
        k = (_SOIL_K_LO + (h % span)).astype(np.uint8).reshape(bh, bw)
        k[~valid.reshape(bh, bw)] = _SOIL_K_LO
        k = np.kron(k, np.ones((_SOIL_BLOCK, _SOIL_BLOCK), dtype=np.uint8))
        k = k[: cam.height_px, : cam.width]
        img = np.empty((cam.height_px, cam.width, 3), dtype=np.uint8)
        img[:, :, 0] = 4 * k
        img[:, :, 1] = 3 * k
        img[:, :, 2] = 2 * k
        rng = np.random.default_rng(_soil_seed(self.fmap.spec.rng_seed, r_cw, center, cam))
        n_speckle = int(_SPECKLE_FRACTION * cam.height_px * cam.width)
        sy = rng.integers(0, cam.height_px, n_speckle)
        sx = rng.integers(0, cam.width, n_speckle)
        img[sy, sx, 1] += 2
        return img

    def render(self, pose: Pose, side="front"):
        cam = self.cam
        r_cw, center = camera_extrinsics(pose, cam, side)
        img = self._soil(pose, side, r_cw, center)
        if len(self._xy) == 0:
            return img

        pts = np.column_stack([self._xy, np.zeros(len(self._xy))])
        pc = (pts - center) @ r_cw.T
        depth = pc[:, 2]
        visible = (depth > _MIN_DEPTH_M) & (depth < _MAX_DEPTH_M)
        if not visible.any():
            return img
        idx = np.flatnonzero(visible)

        # conservative pixel bounds from eight canopy rim points
        angles = np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)
        rim = np.cos(angles), np.sin(angles)
        us, vs = [], []
        for ca, sa in zip(*rim):
            ring = self._xy[idx] + self._radius[idx, None] * np.array([ca, sa])
            uv, valid = project_points(ring, pose, cam, side)
            uv[~valid] = np.nan
            us.append(uv[:, 0])
            vs.append(uv[:, 1])
        us = np.array(us)
        vs = np.array(vs)
        bad = np.isnan(us) | np.isnan(vs)
        ok = ~bad.all(axis=0)
        u0 = np.floor(np.where(bad, np.inf, us).min(axis=0)) - 1
        u1 = np.ceil(np.where(bad, -np.inf, us).max(axis=0)) + 2
        v0 = np.floor(np.where(bad, np.inf, vs).min(axis=0)) - 1
        v1 = np.ceil(np.where(bad, -np.inf, vs).max(axis=0)) + 2
        u0 = np.clip(np.nan_to_num(u0, posinf=0, neginf=0), 0, cam.width).astype(np.int32)
        u1 = np.clip(np.nan_to_num(u1, posinf=0, neginf=0), 0, cam.width).astype(np.int32)
        v0 = np.clip(np.nan_to_num(v0, posinf=0, neginf=0), 0, cam.height_px).astype(np.int32)
        v1 = np.clip(np.nan_to_num(v1, posinf=0, neginf=0), 0, cam.height_px).astype(np.int32)
        ok &= (u1 > u0) & (v1 > v0)
        idx = idx[ok]
        if len(idx) == 0:
            return img

        order = np.argsort(-depth[idx], kind="stable")  # painter: far first
        idx = idx[order]
        bboxes = np.column_stack([u0[ok][order], v0[ok][order], u1[ok][order], v1[ok][order]])
        mults = np.where(
            (depth[idx] <= FADE_DEPTH_M)[:, None],
            np.array(_PLANT_MULTS, dtype=np.int32),
            np.array(_SOIL_MULTS, dtype=np.int32),
        ).astype(np.int32)
        hinv = np.linalg.inv(ground_homography(pose, cam, side))
        _kernels.render_plants(
            img,
            np.ascontiguousarray(hinv),
            np.ascontiguousarray(self._xy[idx, 0]),
            np.ascontiguousarray(self._xy[idx, 1]),
            np.ascontiguousarray(self._radius[idx]),
            np.ascontiguousarray(bboxes),
            np.ascontiguousarray(self._tiles[idx]),
            np.ascontiguousarray(mults),
        )
        return img


def render_view(fmap: FieldMap, pose: Pose, cam: CameraModel, side="front"):
    """One-shot render; build a Renderer directly when rendering many frames."""
    return Renderer(fmap, cam).render(pose, side)


def write_ppm(path, img):
    """Binary portable pixmap (P6)."""
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_ppm(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6"):
        raise ValueError(f"{path}: not a P6 pixmap")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos).reshape(h, w, 3).copy()
