# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the fallback kernels (see fallback.py for contracts).

Float arithmetic is ordered exactly as in the numpy versions so both
backends produce bit-identical images, histograms and region tables.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def render_plants(cnp.uint8_t[:, :, ::1] img, double[:, ::1] hinv,
                  double[::1] gx, double[::1] gy, double[::1] gr,
                  cnp.int32_t[:, ::1] bboxes, cnp.uint8_t[:, :, ::1] tiles,
                  cnp.int32_t[:, ::1] mults):
    cdef Py_ssize_t i, n = gx.shape[0]
    cdef int u, v, u0, v0, u1, v1, tx, ty
    cdef int t = tiles.shape[1]
    cdef double h00 = hinv[0, 0], h01 = hinv[0, 1], h02 = hinv[0, 2]
    cdef double h10 = hinv[1, 0], h11 = hinv[1, 1], h12 = hinv[1, 2]
    cdef double h20 = hinv[2, 0], h21 = hinv[2, 1], h22 = hinv[2, 2]
    cdef double cx, cy, r, uu, vv, w, x, y, dx, dy
    cdef int m0, m1, m2
    cdef unsigned char k
    for i in range(n):
        m0 = mults[i, 0]
        m1 = mults[i, 1]
        m2 = mults[i, 2]
        u0 = bboxes[i, 0]
        v0 = bboxes[i, 1]
        u1 = bboxes[i, 2]
        v1 = bboxes[i, 3]
        cx = gx[i]
        cy = gy[i]
        r = gr[i]
        for v in range(v0, v1):
            vv = v + 0.5
            for u in range(u0, u1):
                uu = u + 0.5
                w = h20 * uu + h21 * vv + h22
                if w <= 1e-12:
                    continue
                x = (h00 * uu + h01 * vv + h02) / w
                y = (h10 * uu + h11 * vv + h12) / w
                dx = (x - cx) / r
                dy = (y - cy) / r
                if dx * dx + dy * dy <= 1.0:
                    tx = <int>((dx + 1.0) * 0.5 * t)
                    ty = <int>((dy + 1.0) * 0.5 * t)
                    if tx < 0:
                        tx = 0
                    elif tx >= t:
                        tx = t - 1
                    if ty < 0:
                        ty = 0
                    elif ty >= t:
                        ty = t - 1
                    k = tiles[i, ty, tx]
                    img[v, u, 0] = <unsigned char>(m0 * k)
                    img[v, u, 1] = <unsigned char>(m1 * k)
                    img[v, u, 2] = <unsigned char>(m2 * k)


def exg_u8_hist(cnp.uint8_t[:, :, ::1] rgb):
    cdef Py_ssize_t h = rgb.shape[0], w = rgb.shape[1], y, x
    cdef double r, g, b, s, val
    cdef int e
    out_arr = np.empty((h, w), dtype=np.uint8)
    hist_arr = np.zeros(256, dtype=np.int64)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef cnp.int64_t[::1] hist = hist_arr
    for y in range(h):
        for x in range(w):
            r = rgb[y, x, 0]
            g = rgb[y, x, 1]
            b = rgb[y, x, 2]
            s = r + g + b
            if s > 0.0:
                val = (2.0 * g - r - b) / s * 85.0 + 85.0
            else:
                val = 85.0
            val = floor(val + 0.5)
            if val < 0.0:
                val = 0.0
            elif val > 255.0:
                val = 255.0
            e = <int>val
            out[y, x] = <unsigned char>e
            hist[e] += 1
    return out_arr, hist_arr


cdef int _find(cnp.int32_t[::1] parent, int a) noexcept:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def label_regions(cnp.uint8_t[:, ::1] mask, int max_height, int min_area):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    cdef int y, x, left, up, ra, rb, nxt = 0, i, root, nc = 0, slot, b
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] labels = labels_arr
    parent_arr = np.arange(h * w // 2 + 2, dtype=np.int32)
    cdef cnp.int32_t[::1] parent = parent_arr

    # pass 1: provisional labels with union of left/up neighbors
    for y in range(h):
        for x in range(w):
            if mask[y, x] == 0:
                labels[y, x] = -1
                continue
            left = labels[y, x - 1] if x > 0 else -1
            up = labels[y - 1, x] if y > 0 else -1
            if left < 0 and up < 0:
                labels[y, x] = nxt
                nxt += 1
            elif left >= 0 and up < 0:
                labels[y, x] = left
            elif left < 0:
                labels[y, x] = up
            else:
                ra = _find(parent, left)
                rb = _find(parent, up)
                if ra != rb:
                    if rb < ra:
                        ra, rb = rb, ra
                    parent[rb] = ra
                labels[y, x] = ra
    if nxt == 0:
        return (
            np.empty((0, 2), dtype=np.float64),
            np.empty(0, dtype=np.int64),
            np.empty((0, 4), dtype=np.int32),
        )

    # compact roots in first-occurrence (raster) order
    compact_arr = np.full(nxt, -1, dtype=np.int32)
    cdef cnp.int32_t[::1] compact = compact_arr
    root_y0_arr = np.zeros(nxt, dtype=np.int32)
    root_y1_arr = np.zeros(nxt, dtype=np.int32)
    cdef cnp.int32_t[::1] root_y0 = root_y0_arr
    cdef cnp.int32_t[::1] root_y1 = root_y1_arr
    for y in range(h):
        for x in range(w):
            if labels[y, x] >= 0:
                root = _find(parent, labels[y, x])
                labels[y, x] = root
                if compact[root] < 0:
                    compact[root] = nc
                    root_y0[nc] = y
                    nc += 1
                root_y1[compact[root]] = y

    # band slots: ceil(height / max_height) per component
    nb_arr = np.zeros(nc, dtype=np.int64)
    cdef cnp.int64_t[::1] nb = nb_arr
    for i in range(nc):
        nb[i] = (root_y1[i] - root_y0[i]) // max_height + 1
    off_arr = np.zeros(nc + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] off = off_arr
    for i in range(nc):
        off[i + 1] = off[i] + nb[i]
    cdef Py_ssize_t nslots = off[nc]

    cnt_arr = np.zeros(nslots, dtype=np.int64)
    sx_arr = np.zeros(nslots, dtype=np.int64)
    sy_arr = np.zeros(nslots, dtype=np.int64)
    bx0_arr = np.full(nslots, 2**30, dtype=np.int64)
    bx1_arr = np.full(nslots, -1, dtype=np.int64)
    by0_arr = np.full(nslots, 2**30, dtype=np.int64)
    by1_arr = np.full(nslots, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] cnt = cnt_arr, sx = sx_arr, sy = sy_arr
    cdef cnp.int64_t[::1] bx0 = bx0_arr, bx1 = bx1_arr, by0 = by0_arr, by1 = by1_arr
    for y in range(h):
        for x in range(w):
            if labels[y, x] >= 0:
                i = compact[labels[y, x]]
                b = (y - root_y0[i]) // max_height
                slot = off[i] + b
                cnt[slot] += 1
                sx[slot] += x
                sy[slot] += y
                if x < bx0[slot]:
                    bx0[slot] = x
                if x > bx1[slot]:
                    bx1[slot] = x
                if y < by0[slot]:
                    by0[slot] = y
                if y > by1[slot]:
                    by1[slot] = y

    keep = cnt_arr >= min_area
    centers = np.column_stack(
        [sx_arr[keep].astype(np.float64) / cnt_arr[keep], sy_arr[keep].astype(np.float64) / cnt_arr[keep]]
    )
    bboxes = np.column_stack(
        [bx0_arr[keep], by0_arr[keep], bx1_arr[keep] - bx0_arr[keep] + 1, by1_arr[keep] - by0_arr[keep] + 1]
    ).astype(np.int32)
    return centers, cnt_arr[keep], bboxes
