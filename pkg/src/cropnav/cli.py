"""Command line interface.

Subcommands: generate, detect, follow, switch, calibrate-tau, run, eval.
Exit codes: 0 success, 1 episode failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__, rowdetect, rowid, rowtrack, vegetation
from ._kernels import backend_name
from .config import ConfigError, RunConfig, load_config, serialize_config, sim_config, with_seed
from .fieldsim import (
    Pose,
    generate_field,
    ground_from_pixels,
    load_fieldmap,
    read_ppm,
    render_view,
    save_fieldmap,
)
from .guidance import STAGE_SWITCH, NavState
from .simloop import (
    Simulator,
    write_episode_log,
    write_guidance_log_csv,
    write_metrics_csv,
    write_switch_events_csv,
    write_trajectory_csv,
)


def _load(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = with_seed(cfg, args.seed)
    if getattr(args, "out_dir", None):
        cfg = replace(cfg, output=replace(cfg.output, directory=args.out_dir))
    if getattr(args, "debug_images", False):
        cfg = replace(cfg, output=replace(cfg.output, debug_images=True))
    return cfg


def _outdir(cfg):
    os.makedirs(cfg.output.directory, exist_ok=True)
    return cfg.output.directory


def cmd_generate(args):
    cfg = _load(args)
    out = _outdir(cfg)
    fmap = generate_field(cfg.field)
    path = os.path.join(out, "fieldmap.txt")
    save_fieldmap(fmap, path)
    print(f"wrote {path}: {len(fmap.plant_xy)} plants, {len(fmap.weed_xy)} weeds")
    return 0


def cmd_detect(args):
    cfg = _load(args)
    out = _outdir(cfg)
    if args.image:
        img = read_ppm(args.image)
    else:
        fmap = load_fieldmap(args.fieldmap) if args.fieldmap else generate_field(cfg.field)
        x, y, theta = (float(v) for v in args.pose.split(","))
        img = render_view(fmap, Pose(x, y, theta), cfg.camera, args.camera)
    mask = vegetation.segment(img)
    regions = vegetation.extract_regions(mask)
    centers = vegetation.region_centers(regions)
    rows, sig = rowdetect.detect_rows(centers, cfg.scan, return_signal=True)
    rowdetect.write_signal_csv(os.path.join(out, "signal.csv"), sig)
    rowdetect.write_rows_csv(os.path.join(out, "rows.csv"), rows)
    vegetation.write_regions_csv(os.path.join(out, "regions.csv"), regions)
    print(f"detected {len(rows)} rows from {len(regions)} regions -> {out}/rows.csv")
    return 0


def _finish_episode(result, out, label):
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), result)
    write_metrics_csv(os.path.join(out, "metrics.csv"), result)
    write_episode_log(os.path.join(out, "episode.log"), result)
    write_guidance_log_csv(os.path.join(out, "guidance.csv"), result)
    write_switch_events_csv(os.path.join(out, "switch_events.csv"), result)
    for lane in sorted(result.lane_samples):
        mean_d, std_d, mean_a, std_a, n = result.lane_stats(lane)
        print(
            f"{label} lane {lane}: {n} frames, deviation {mean_d:.2f}+-{std_d:.2f} cm, "
            f"angle {mean_a:.2f}+-{std_a:.2f} deg"
        )
    if result.failed:
        print(f"{label} FAILED: {result.failure_reason}")
        return 1
    print(f"{label} completed: {result.lanes_completed} lanes")
    return 0


def cmd_follow(args):
    cfg = _load(args)
    out = _outdir(cfg)
    fmap = generate_field(cfg.field)
    sim = Simulator(fmap, replace(sim_config(cfg), lane_count=1))
    result = sim.run_episode(debug_dir=out if cfg.output.debug_images else None)
    return _finish_episode(result, out, "follow")


def cmd_run(args):
    cfg = _load(args)
    out = _outdir(cfg)
    fmap = generate_field(cfg.field)
    sim = Simulator(fmap, sim_config(cfg))
    result = sim.run_episode(debug_dir=out if cfg.output.debug_images else None)
    return _finish_episode(result, out, "run")


def switch_start(fmap, cfg: RunConfig, overshoot=2.9):
    """Pose and state at a lane-switch entry (past the row ends of lane 0)."""
    pose = Pose(fmap.row_end_x() + overshoot, float(fmap.lane_centerlines[0][0, 1]), 0.0)
    state = NavState(
        lane_count=2,
        rows_per_lane=fmap.spec.rows_per_lane,
        row_spacing=fmap.spec.row_spacing,
        stage=STAGE_SWITCH,
        rows_to_cross=fmap.spec.rows_per_lane,
        nudge_remaining=fmap.spec.row_spacing / 2.0 if fmap.spec.rows_per_lane % 2 == 0 else 0.0,
    )
    return pose, state


def cmd_switch(args):
    cfg = _load(args)
    out = _outdir(cfg)
    fmap = generate_field(cfg.field)
    if fmap.lane_count < 2:
        print("switch requires a field with at least 2 lanes", file=sys.stderr)
        return 2
    sim = Simulator(fmap, sim_config(cfg))
    pose, state = switch_start(fmap, cfg)
    # run only the lateral maneuver: stop as soon as stage 3 completes
    result = sim.run_episode(start_pose=pose, start_state=state, stop_after_switch=True)
    write_switch_events_csv(os.path.join(out, "switch_events.csv"), result)
    write_trajectory_csv(os.path.join(out, "trajectory.csv"), result)
    write_episode_log(os.path.join(out, "episode.log"), result)
    rec = result.switches[0] if result.switches else None
    n = len(rec.events) if rec else 0
    path = rec.lateral_path_m if rec else 0.0
    print(f"switch: {n} new-row events, lateral path {path:.2f} m")
    if result.failed:
        print(f"switch FAILED: {result.failure_reason}")
        return 1
    return 0


def cmd_calibrate_tau(args):
    cfg = _load(args)
    out = _outdir(cfg)
    stats = calibrate_tau(cfg)
    path = os.path.join(out, "tau_calibration.csv")
    rowid.write_calibration_csv(path, [stats])
    name, mu_p, sd_p, mu_n, sd_n, tau = stats
    print(
        f"{name}: same-row D {mu_p:.3f}+-{sd_p:.3f}, different-row D {mu_n:.3f}+-{sd_n:.3f}"
        f" -> tau_c {tau:.3f} ({path})"
    )
    return 0


def calibration_distance(a, b, thresholds):
    """Distance measure between descriptor sets for calibration.

    The pipeline distance when enough ratio-test matches survive; when the
    filter leaves too few (the usual different-row outcome), the mean of
    the ``min_matches`` closest nearest-neighbor distances, so every pair
    gets a value on the same scale.
    """
    try:
        return rowid.similarity_distance(rowid.match_sets(a, b, thresholds), thresholds)
    except rowid.InsufficientMatches:
        d = a.descriptors.astype(np.float64)
        e = b.descriptors.astype(np.float64)
        d2 = np.maximum(
            (d * d).sum(axis=1)[:, None] + (e * e).sum(axis=1)[None, :] - 2.0 * (d @ e.T), 0.0
        )
        best = np.sqrt(d2.min(axis=1))
        best.sort()
        return float(best[: thresholds.min_matches].mean())


def calibrate_tau(cfg: RunConfig, n_shifts=36):
    """Sample same/different-row descriptor distances on the switch vantage.

    The robot is swept laterally across more than one row pitch so several
    physical rows are observed.  Returns (profile, mu_pos, sigma_pos,
    mu_neg, sigma_neg, tau_c) where tau_c is the midpoint of the means.
    """
    fmap = generate_field(cfg.field)
    sim = Simulator(fmap, sim_config(cfg))
    base = switch_start(fmap, cfg)[0]
    shift = max(0.02, 1.3 * cfg.field.row_spacing / n_shifts)
    observed = []  # (world row abscissa, frame index, descriptor set)
    frame_step = cfg.control.u_lateral / 15.0  # one control frame of slide
    for k in range(n_shifts):
        for sub in (0, 1):
            pose = Pose(base.x, base.y + k * shift + sub * frame_step, base.theta)
            img, regions = sim.perceive(pose, "back")
            centers = vegetation.region_centers(regions)
            rows = rowdetect.detect_rows(centers, sim.switch_scan)
            trackers = rowtrack.init_trackers(rows, regions, cfg.track) if rows else []
            for t in trackers:
                # edge-clipped rows give partial, unstable descriptor sets
                if abs(t.ix - cfg.camera.width / 2.0) > 420.0:
                    continue
                ground, valid = ground_from_pixels(
                    [(t.ix, float(cfg.camera.height_px))], pose, cfg.camera, "back"
                )
                if not valid[0]:
                    continue
                try:
                    ds = rowid.extract_set(img, t, cfg.track, cfg.switch)
                except rowid.EmptyRegion:
                    continue
                if len(ds.keypoints) < 2 * cfg.switch.min_matches:
                    continue
                observed.append((float(ground[0, 1]), 2 * k + sub, ds))
    # cluster observations of the same physical row by world abscissa
    observed.sort(key=lambda o: o[0])
    groups = []
    for wy, fr, ds in observed:
        if groups and wy - groups[-1][-1][0] < 0.45 * cfg.field.row_spacing:
            groups[-1].append((wy, fr, ds))
        else:
            groups.append([(wy, fr, ds)])
    pos, neg = [], []
    for g in groups:
        by_frame = sorted(g, key=lambda o: o[1])
        for i in range(len(by_frame) - 1):
            if by_frame[i + 1][1] - by_frame[i][1] == 1:
                pos.append(calibration_distance(by_frame[i][2], by_frame[i + 1][2], cfg.switch))
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            neg.append(calibration_distance(groups[a][0][2], groups[b][0][2], cfg.switch))
    if len(pos) < 2 or len(neg) < 2:
        raise RuntimeError("calibration found too few descriptor pairs")
    mu_p, sd_p = float(np.mean(pos)), float(np.std(pos))
    mu_n, sd_n = float(np.mean(neg)), float(np.std(neg))
    return (cfg.profile, mu_p, sd_p, mu_n, sd_n, (mu_p + mu_n) / 2.0)


def cmd_eval(args):
    cfg = _load(args)
    out = _outdir(cfg)
    rows = []
    failures = 0
    for seed in sorted(range(args.seeds)):
        c = with_seed(cfg, seed)
        fmap = generate_field(c.field)
        sim = Simulator(fmap, replace(sim_config(c), lane_count=1))
        result = sim.run_episode()
        if result.failed or 0 not in result.lane_samples:
            failures += 1
            continue
        s = np.array(result.lane_samples[0])
        rows.append((seed, s[:, 0].mean(), s[:, 0].std(), s[:, 1].mean(), s[:, 1].std()))
    path = os.path.join(out, "eval.csv")
    with open(path, "w") as f:
        f.write("profile,seed,mean_dev_cm,std_dev_cm,mean_ang_deg,std_ang_deg\n")
        for seed, md, sd, ma, sa in rows:
            f.write("%s,%d,%.4f,%.4f,%.4f,%.4f\n" % (cfg.profile, seed, md, sd, ma, sa))
        if rows:
            agg = np.array([r[1:] for r in rows])
            f.write(
                "%s,all,%.4f,%.4f,%.4f,%.4f\n"
                % (cfg.profile, agg[:, 0].mean(), agg[:, 1].mean(), agg[:, 2].mean(), agg[:, 3].mean())
            )
    print(f"eval: {len(rows)} episodes ok, {failures} failed -> {path}")
    return 1 if failures else 0


def build_parser():
    p = argparse.ArgumentParser(prog="cropnav", description=__doc__)
    p.add_argument("--version", action="version", version=f"cropnav {__version__} ({backend_name})")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="configuration file (defaults apply when omitted)")
        sp.add_argument("--out-dir", help="output directory (overrides [output])")
        if seed:
            sp.add_argument("--seed", type=int, help="override field and episode seeds")

    sp = sub.add_parser("generate", help="expand the field spec into a fieldmap file")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("detect", help="detect crop rows in one frame")
    common(sp)
    sp.add_argument("--image", help="P6 pixmap to detect on")
    sp.add_argument("--fieldmap", help="fieldmap file to render from")
    sp.add_argument("--pose", default="0,0.275,0", help="robot pose x,y,theta for rendering")
    sp.add_argument("--camera", default="front", choices=["front", "back"])
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("follow", help="single-lane following episode")
    common(sp)
    sp.add_argument("--debug-images", action="store_true")
    sp.set_defaults(func=cmd_follow)

    sp = sub.add_parser("switch", help="lateral lane-switch maneuver only")
    common(sp)
    sp.set_defaults(func=cmd_switch)

    sp = sub.add_parser("calibrate-tau", help="same/different-row distance calibration")
    common(sp)
    sp.set_defaults(func=cmd_calibrate_tau)

    sp = sub.add_parser("run", help="full multi-lane episode")
    common(sp)
    sp.add_argument("--debug-images", action="store_true")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("eval", help="aggregate follow metrics across seeds")
    common(sp, seed=False)
    sp.add_argument("--seeds", type=int, default=10)
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
