"""Crop-row detection from plant centers in one frame.

A fixed-height window slides right-to-left across the image; the centers
inside each position are fit with a least-squares line x = c + m*(y - H),
anchored at the image bottom.  Positions whose line misses the bottom
edge, or hold fewer than two centers, are discarded and the remaining
angle sequence is compacted.  The moving variance of that sequence is the
field-structure signal: angle agreement (a crop row under the window)
shows up as a trough, discord between rows as a peak.  Prominence-filtered
troughs, merged over adjacent similar positions, map back to their window
line, giving the detected row set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateFit(Exception):
    """Fewer than two points, or no vertical spread to fit against."""


@dataclass(frozen=True)
class ScanConfig:
    image_width: int = 1280
    image_height: int = 720
    window_width: int = 128  # W/10
    # windows span the near half of the view: beyond it adjacent rows
    # drift across more than one window width and their segments mix
    window_height: int = 360
    # demand support reaching the near half (off during lane switching,
    # where the receding rows legitimately sit in the far half)
    require_near_content: bool = True
    step_count: int = 100
    variance_window: int = 10
    prominence_threshold: float = 15.0  # deg^2 on the variance signal
    trough_merge_gap: int = 3  # scan positions
    trough_merge_tol: float = 0.20  # relative std-dev similarity
    min_support: int = 2
    # the corridor refit around a trough line trims outliers (weeds) one
    # at a time until every residual fits within this tolerance
    fit_inlier_tol: float = 12.0
    refit_halfwidth: float = 40.0
    # a trough only counts as a row when its angles agree; weed-gap
    # windows produce variance far above this
    trough_max_sigma2: float = 120.0
    # the corridor refit must keep at least this many centers; accidental
    # weed alignments rarely reach four
    trough_min_support: int = 4
    # two troughs mapping closer than this are one physical row
    min_row_separation: float = 96.0

    @property
    def stride(self):
        return (self.image_width - self.window_width) / self.step_count

    @property
    def overlap(self):
        return 1.0 - self.stride / self.window_width

    def validate(self):
        if not 0 < self.window_width <= self.image_width:
            raise ValueError("window_width must lie in (0, image_width]")
        if not 0 < self.window_height <= self.image_height:
            raise ValueError("window_height must lie in (0, image_height]")
        if self.step_count < 1:
            raise ValueError("step_count must be >= 1")
        if self.stride <= 0:
            raise ValueError("stride (W - w)/S must be positive")
        if self.variance_window < 2:
            raise ValueError("variance_window must be >= 2")
        if self.min_support < 2:
            raise ValueError("min_support must be >= 2")


@dataclass(frozen=True)
class LineHypothesis:
    scan_pos: int  # window index, 0 = rightmost
    intercept: float  # c: x at the image bottom (y = H)
    slope: float  # m in x = c + m*(y - H)
    phi_deg: float  # angle from image vertical
    support: int

    @property
    def ix(self):
        return self.intercept


@dataclass(frozen=True)
class CropRowLine:
    ix: float  # bottom intersection x, pixels
    phi_deg: float
    slope: float
    scan_positions: tuple = ()
    support: int = 0


@dataclass
class FieldStructureSignal:
    scan_pos: np.ndarray  # original window indices of retained hypotheses
    phi_deg: np.ndarray
    sigma2: np.ndarray
    peaks: list = field(default_factory=list)
    troughs: list = field(default_factory=list)


def fit_line(points, image_height):
    """Least-squares x = c + m*(y - H) through pixel centers; returns (c, m)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 2:
        raise DegenerateFit("need at least two points")
    t = pts[:, 1] - image_height
    x = pts[:, 0]
    tm = t.mean()
    xm = x.mean()
    stt = ((t - tm) ** 2).sum()
    if stt <= 0.0:
        raise DegenerateFit("zero vertical spread")
    m = ((t - tm) * (x - xm)).sum() / stt
    c = xm - m * tm
    return float(c), float(m)


def scan_windows(centers, cfg: ScanConfig):
    """Line hypotheses per window position, right-to-left, discards applied."""
    cfg.validate()
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        ymin = cfg.image_height - cfg.window_height
        pts = pts[pts[:, 1] >= ymin]
    out = []
    if len(pts) == 0:
        return out
    xs = pts[:, 0]
    near_y = cfg.image_height / 2.0
    for n in range(cfg.step_count + 1):
        right = cfg.image_width - n * cfg.stride
        sel = (xs >= right - cfg.window_width) & (xs < right)
        if int(sel.sum()) < cfg.min_support:
            continue
        # a navigable row reaches the near half of the view; windows whose
        # support is all far-field clutter are discarded with the
        # non-intersecting lines
        if cfg.require_near_content and pts[sel][:, 1].max() < near_y:
            continue
        try:
            c, m = fit_line(pts[sel], cfg.image_height)
        except DegenerateFit:
            continue
        if not 0.0 <= c < cfg.image_width:
            continue
        out.append(
            LineHypothesis(
                scan_pos=n,
                intercept=c,
                slope=m,
                phi_deg=math.degrees(math.atan(m)),
                support=int(sel.sum()),
            )
        )
    return out


def refit_corridor(centers, intercept, slope, cfg: ScanConfig):
    """Trimmed least-squares refit of the centers along a candidate line.

    Collects centers within ``refit_halfwidth`` of the line over the scan
    band, then drops the worst outlier (weeds) one at a time until every
    residual fits ``fit_inlier_tol``.  Returns (c, m, support) or None when
    fewer than ``trough_min_support`` centers survive.
    """
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(pts):
        pts = pts[pts[:, 1] >= cfg.image_height - cfg.window_height]
    if len(pts) < cfg.trough_min_support:
        return None
    line_x = intercept + slope * (pts[:, 1] - cfg.image_height)
    members = pts[np.abs(pts[:, 0] - line_x) <= cfg.refit_halfwidth]
    if len(members) < cfg.trough_min_support:
        return None
    try:
        c, m = fit_line(members, cfg.image_height)
        while True:
            resid = np.abs(members[:, 0] - (c + m * (members[:, 1] - cfg.image_height)))
            worst = int(np.argmax(resid))
            if resid[worst] <= cfg.fit_inlier_tol:
                break
            if len(members) - 1 < cfg.trough_min_support:
                return None
            members = np.delete(members, worst, axis=0)
            c, m = fit_line(members, cfg.image_height)
    except DegenerateFit:
        return None
    if not 0.0 <= c < cfg.image_width:
        return None
    return c, m, len(members)


def moving_variance(values, k):
    """Moving variance over a window of length k, truncated at the ends.

    The window around n is [n - k//2, n + k//2]; its mean uses the number
    of included samples, while the squared deviations keep the fixed
    divisor k, which biases truncated edge windows low.
    """
    if k < 2:
        raise ValueError("variance window k must be >= 2")
    v = np.asarray(values, dtype=np.float64)
    half = k // 2
    out = np.empty(len(v))
    for n in range(len(v)):
        seg = v[max(0, n - half) : min(len(v), n + half + 1)]
        mean = seg.mean()
        out[n] = ((seg - mean) ** 2).sum() / k
    return out


def _plateaus(v):
    """Maximal equal-value runs strictly above both neighbors (ends count)."""
    n = len(v)
    runs = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and v[j + 1] == v[i]:
            j += 1
        left_lower = i == 0 or v[i - 1] < v[i]
        right_lower = j == n - 1 or v[j + 1] < v[i]
        if left_lower and right_lower and not (i == 0 and j == n - 1):
            runs.append((i, j))
        i = j + 1
    return runs


def _prominence(v, i, j):
    """Topographic prominence of the plateau [i, j].

    Height over the higher of the saddles toward neighboring strictly
    higher extrema; a side with no higher ground before the signal end
    contributes no saddle, and with no saddle at all (a global extremum)
    the drop is measured to the signal minimum.
    """
    h = v[i]
    saddles = []
    low = h
    p = i - 1
    while p >= 0:
        if v[p] > h:
            saddles.append(low)
            break
        low = min(low, v[p])
        p -= 1
    low = h
    p = j + 1
    while p < len(v):
        if v[p] > h:
            saddles.append(low)
            break
        low = min(low, v[p])
        p += 1
    if saddles:
        return h - max(saddles)
    return h - v.min()


def find_extrema(sigma2, cfg: ScanConfig):
    """(peaks, troughs) as (position, value) lists, prominence filtered.

    Troughs are the prominence peaks of the negated signal, using the same
    constant threshold; a plateau reports its midpoint.
    """
    v = np.asarray(sigma2, dtype=np.float64)
    peaks, troughs = [], []
    for sig, out in ((v, peaks), (-v, troughs)):
        for i, j in _plateaus(sig):
            if _prominence(sig, i, j) >= cfg.prominence_threshold:
                pos = (i + j) // 2
                out.append((pos, float(v[pos])))
    return peaks, troughs


def merge_troughs(troughs, scan_positions=None, cfg: ScanConfig = None):
    """Collapse adjacent troughs of similar depth into weighted positions.

    Neighbors within ``trough_merge_gap`` scan positions whose standard
    deviations differ by at most ``trough_merge_tol`` (relative) merge into
    one trough at the inverse-variance weighted mean position.  Adjacency
    is measured in original window positions (``scan_positions`` maps the
    compacted signal index back): runs of different rows sit next to each
    other after compaction but keep their true scan gap.
    """
    if cfg is None:
        cfg = ScanConfig()
    if not troughs:
        return []
    troughs = sorted(troughs)

    def scan_of(pos):
        return pos if scan_positions is None else float(scan_positions[pos])

    clusters = [[troughs[0]]]
    for pos, s2 in troughs[1:]:
        ppos, ps2 = clusters[-1][-1]
        sd, psd = math.sqrt(max(s2, 0.0)), math.sqrt(max(ps2, 0.0))
        if scan_of(pos) - scan_of(ppos) <= cfg.trough_merge_gap and abs(
            sd - psd
        ) <= cfg.trough_merge_tol * max(sd, psd, 1e-12):
            clusters[-1].append((pos, s2))
        else:
            clusters.append([(pos, s2)])
    merged = []
    for cluster in clusters:
        wsum = 0.0
        psum = 0.0
        for pos, s2 in cluster:
            wgt = 1.0 / (s2 + 1e-9)
            wsum += wgt
            psum += wgt * pos
        merged.append((psum / wsum, min(s2 for _, s2 in cluster)))
    return merged


def field_structure_signal(hypotheses, cfg: ScanConfig):
    phis = np.array([h.phi_deg for h in hypotheses])
    sig = FieldStructureSignal(
        scan_pos=np.array([h.scan_pos for h in hypotheses], dtype=np.int64),
        phi_deg=phis,
        sigma2=moving_variance(phis, cfg.variance_window) if len(phis) else np.empty(0),
    )
    sig.peaks, sig.troughs = find_extrema(sig.sigma2, cfg) if len(phis) else ([], [])
    return sig


def detect_rows(centers, cfg: ScanConfig, return_signal=False):
    """Full pipeline: detected crop-row lines ordered left-to-right by ix."""
    hyps = scan_windows(centers, cfg)
    sig = field_structure_signal(hyps, cfg)
    rows = []
    if hyps:
        used = set()
        troughs = [(p, v) for p, v in sig.troughs if v <= cfg.trough_max_sigma2]
        for pos, s2 in merge_troughs(troughs, sig.scan_pos, cfg):
            # nearest retained hypothesis; ties resolve toward the scan
            # origin (smaller compacted index = further right)
            idx = int(math.floor(pos + 0.5))
            if abs(pos - (math.floor(pos) + 0.5)) < 1e-12:
                idx = int(math.floor(pos))
            idx = min(max(idx, 0), len(hyps) - 1)
            if idx in used:
                continue
            used.add(idx)
            # hypotheses across the trough basin seed trimmed corridor
            # refits over the scan band; refitting sharpens the line,
            # rejects accidental weed alignments (too few survivors) and
            # separates rows of similar angle merged into one basin
            half = cfg.variance_window // 2
            seeds = {min(max(idx + d, 0), len(hyps) - 1) for d in (-half * 2, -half, 0, half, half * 2)}
            for sidx in sorted(seeds):
                refit = refit_corridor(centers, hyps[sidx].intercept, hyps[sidx].slope, cfg)
                if refit is None:
                    continue
                c, m, support = refit
                rows.append(
                    (
                        s2,
                        CropRowLine(
                            ix=c,
                            phi_deg=math.degrees(math.atan(m)),
                            slope=m,
                            scan_positions=(hyps[sidx].scan_pos,),
                            support=support,
                        ),
                    )
                )
        # refits landing within one window of each other describe the same
        # physical row; keep the best-supported one
        rows.sort(key=lambda rv: rv[1].ix)
        deduped = []
        for s2, row in rows:
            if deduped and abs(row.ix - deduped[-1][1].ix) < cfg.min_row_separation:
                if (row.support, -s2) > (deduped[-1][1].support, -deduped[-1][0]):
                    deduped[-1] = (s2, row)
            else:
                deduped.append((s2, row))
        rows = _vanishing_point_filter([r for _, r in deduped])
    if return_signal:
        return rows, sig
    return rows


def _vanishing_point_filter(rows, slope_tol=0.12):
    """Drop lines inconsistent with the common vanishing point.

    Parallel ground rows project to image lines through one vanishing
    point, so slope is an affine function of the bottom intersection;
    accidental clutter alignments rarely satisfy it.  The consensus line
    is found by checking every row pair (row counts are tiny), which is
    robust to a high-leverage outlier at the image edge.
    """
    n = len(rows)
    if n < 3:
        return rows
    ix = np.array([r.ix for r in rows])
    m = np.array([r.slope for r in rows])
    sup = np.array([max(r.support, 1) for r in rows], dtype=np.float64)
    best_score, best_inliers = None, None
    for i in range(n):
        for j in range(i + 1, n):
            if abs(ix[j] - ix[i]) < 1e-9:
                continue
            b = (m[j] - m[i]) / (ix[j] - ix[i])
            a = m[i] - b * ix[i]
            resid = np.abs(m - (a + b * ix))
            inliers = resid <= slope_tol
            # rival consensus sets are arbitrated by the plant evidence
            # behind each line, not just how many lines agree
            score = (float(sup[inliers].sum()), int(inliers.sum()), -float(resid[inliers].sum()))
            if best_score is None or score > best_score:
                best_score, best_inliers = score, inliers
    if best_inliers is not None and 3 <= int(best_inliers.sum()) < n:
        return [r for r, keep in zip(rows, best_inliers) if keep]
    return rows


def write_signal_csv(path, sig: FieldStructureSignal):
    peak_at = {p for p, _ in sig.peaks}
    trough_at = {p for p, _ in sig.troughs}
    with open(path, "w") as f:
        f.write("scan_pos,phi_deg,sigma2,is_peak,is_trough\n")
        for i in range(len(sig.phi_deg)):
            f.write(
                "%d,%.6f,%.6f,%d,%d\n"
                % (sig.scan_pos[i], sig.phi_deg[i], sig.sigma2[i], i in peak_at, i in trough_at)
            )


def write_rows_csv(path, rows):
    with open(path, "w") as f:
        f.write("row_idx,I_x,phi_deg\n")
        for i, r in enumerate(rows):
            f.write("%d,%.3f,%.4f\n" % (i, r.ix, r.phi_deg))
