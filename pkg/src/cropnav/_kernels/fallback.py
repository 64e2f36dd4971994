"""Numpy/scipy implementations of the hot per-pixel kernels.

Mirrors cropnav._kernels._native operation for operation; both backends
must produce bit-identical outputs (the elementwise float64 arithmetic is
written in the same order in both).
"""

import numpy as np
from scipy import ndimage

_STRUCT4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def render_plants(img, hinv, gx, gy, gr, bboxes, tiles, mults):
    """Rasterize textured ground disks into img (in place, painter order).

    img    : (H, W, 3) uint8
    hinv   : (3, 3) float64 pixel->ground homography
    gx, gy, gr : (N,) float64 ground center and radius per disk
    bboxes : (N, 4) int32 clipped pixel bounds u0, v0, u1, v1 (exclusive)
    tiles  : (N, T, T) uint8 brightness values sampled in disk-local coords
    mults  : (N, 3) int32 per-disk, per-channel color multipliers
    """
    t = tiles.shape[1]
    h00, h01, h02 = hinv[0]
    h10, h11, h12 = hinv[1]
    h20, h21, h22 = hinv[2]
    for i in range(len(gx)):
        u0, v0, u1, v1 = bboxes[i]
        if u1 <= u0 or v1 <= v0:
            continue
        uu = np.arange(u0, u1, dtype=np.float64) + 0.5
        vv = np.arange(v0, v1, dtype=np.float64) + 0.5
        w = h20 * uu[None, :] + h21 * vv[:, None] + h22
        ok = w > 1e-12
        wsafe = np.where(ok, w, 1.0)
        x = (h00 * uu[None, :] + h01 * vv[:, None] + h02) / wsafe
        y = (h10 * uu[None, :] + h11 * vv[:, None] + h12) / wsafe
        dx = (x - gx[i]) / gr[i]
        dy = (y - gy[i]) / gr[i]
        inside = ok & (dx * dx + dy * dy <= 1.0)
        if not inside.any():
            continue
        tx = ((dx + 1.0) * 0.5 * t).astype(np.int32).clip(0, t - 1)
        ty = ((dy + 1.0) * 0.5 * t).astype(np.int32).clip(0, t - 1)
        k = tiles[i][ty, tx]
        sub = img[v0:v1, u0:u1]
        for c in range(3):
            ch = sub[:, :, c]
            ch[inside] = (int(mults[i, c]) * k[inside].astype(np.int32)).astype(np.uint8)


def exg_u8_hist(rgb):
    """Excess-green index mapped to 8 bit, plus its 256-bin histogram.

    ExG = 2g - r - b on chromaticity-normalized channels (0 where the
    channel sum is 0), affinely mapped from [-1, 2] to [0, 255].
    """
    r = rgb[:, :, 0].astype(np.float64)
    g = rgb[:, :, 1].astype(np.float64)
    b = rgb[:, :, 2].astype(np.float64)
    s = r + g + b
    safe = np.where(s > 0.0, s, 1.0)
    val = np.where(s > 0.0, (2.0 * g - r - b) / safe * 85.0 + 85.0, 85.0)
    out = np.floor(val + 0.5)
    np.clip(out, 0.0, 255.0, out=out)
    out = out.astype(np.uint8)
    hist = np.bincount(out.ravel(), minlength=256).astype(np.int64)
    return out, hist


def label_regions(mask, max_height, min_area):
    """4-connected components, split into horizontal bands of max_height.

    Returns (centers (N,2) float64 [x, y], areas (N,) int64,
    bboxes (N,4) int32 [x0, y0, w, h]), unordered; components taller than
    max_height are cut into bands relative to their own top row, each band
    becoming its own region; regions below min_area pixels are dropped.
    """
    labels, n = ndimage.label(mask, structure=_STRUCT4)
    if n == 0:
        return (
            np.empty((0, 2), dtype=np.float64),
            np.empty(0, dtype=np.int64),
            np.empty((0, 4), dtype=np.int32),
        )
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs].astype(np.int64) - 1
    # np.nonzero is in raster order, so the first occurrence of a label
    # carries its top row.
    _, first = np.unique(lab, return_index=True)
    y0 = np.zeros(n, dtype=np.int64)
    y0[lab[first]] = ys[first]
    band = (ys - y0[lab]) // max_height
    max_bands = int(band.max()) + 1
    key = lab * max_bands + band
    order = np.argsort(key, kind="stable")
    key_s = key[order]
    ys_s = ys[order].astype(np.int64)
    xs_s = xs[order].astype(np.int64)
    starts = np.concatenate([[0], np.flatnonzero(np.diff(key_s)) + 1])
    counts = np.diff(np.concatenate([starts, [len(key_s)]]))
    sum_x = np.add.reduceat(xs_s, starts)
    sum_y = np.add.reduceat(ys_s, starts)
    min_x = np.minimum.reduceat(xs_s, starts)
    max_x = np.maximum.reduceat(xs_s, starts)
    min_y = np.minimum.reduceat(ys_s, starts)
    max_y = np.maximum.reduceat(ys_s, starts)
    keep = counts >= min_area
    centers = np.column_stack(
        [sum_x[keep].astype(np.float64) / counts[keep], sum_y[keep].astype(np.float64) / counts[keep]]
    )
    bboxes = np.column_stack(
        [min_x[keep], min_y[keep], max_x[keep] - min_x[keep] + 1, max_y[keep] - min_y[keep] + 1]
    ).astype(np.int32)
    return centers, counts[keep].astype(np.int64), bboxes
