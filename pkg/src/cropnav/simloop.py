"""Closed-loop simulation: perception -> guidance -> kinematics at 15 fps.

Each frame renders the active camera, segments vegetation, extracts plant
regions, updates (or acquires) the row trackers, lets the navigation state
machine pick a velocity command and integrates the omnidirectional
platform with an exact constant-twist step.  Episode metrics are measured
against the analytic lane centerlines of the FieldMap.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import rowdetect, rowid, rowtrack, vegetation
from .fieldsim import (
    BACK,
    FRONT,
    CameraModel,
    FieldMap,
    Pose,
    Renderer,
    bottom_center_ground,
    ground_truth_errors,
    polyline_distance,
    write_ppm,
)
from .guidance import (
    STAGE_DONE,
    STAGE_EXIT,
    STAGE_FOLLOW_BACK,
    STAGE_FOLLOW_FRONT,
    STAGE_SWITCH,
    ControlParams,
    NavState,
    Observations,
    VelocityCommand,
    nav_step,
)

DT = 1.0 / 15.0
EXIT_CLEAR_DISTANCE = 1.0  # leading camera empty for this much travel


class EpisodeTimeout(Exception):
    """Travel budget exceeded before the episode finished."""


def step_kinematics(pose: Pose, cmd: VelocityCommand, dt):
    """Exact constant-twist integration of body velocities (v_x, u_y, omega)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    vals = (pose.x, pose.y, pose.theta, cmd.v_x, cmd.u_y, cmd.omega)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite pose or command")
    vx, vy, w = cmd.v_x, cmd.u_y, cmd.omega
    ct, st = math.cos(pose.theta), math.sin(pose.theta)
    if abs(w) < 1e-12:
        dx_b = vx * dt
        dy_b = vy * dt
    else:
        dwt = w * dt
        s = math.sin(dwt) / w
        c = (1.0 - math.cos(dwt)) / w
        dx_b = vx * s - vy * c
        dy_b = vx * c + vy * s
    return Pose(
        pose.x + ct * dx_b - st * dy_b,
        pose.y + st * dx_b + ct * dy_b,
        pose.theta + w * dt,
    ).wrapped()


@dataclass
class SimConfig:
    camera: CameraModel = field(default_factory=CameraModel)
    scan: rowdetect.ScanConfig = field(default_factory=rowdetect.ScanConfig)
    track: rowtrack.TrackConfig = field(default_factory=rowtrack.TrackConfig)
    control: ControlParams = field(default_factory=ControlParams)
    switch: rowid.SwitchThresholds = field(default_factory=rowid.SwitchThresholds)
    lane_count: int = 1
    max_travel_m: float = 120.0
    seed: int = 0
    start_offset_m: float = 0.02  # initial lateral offset scale, from seed
    start_heading_deg: float = 1.0


@dataclass
class SwitchRecord:
    from_lane: int
    events: list = field(default_factory=list)
    lateral_path_m: float = 0.0


@dataclass
class EpisodeResult:
    trajectory: list = field(default_factory=list)  # (t, x, y, theta, stage)
    commands: list = field(default_factory=list)  # (t, v_x, u_y, omega)
    feature_log: list = field(default_factory=list)  # (t, stage, a_px, theta_deg, rows_crossed)
    transitions: list = field(default_factory=list)  # (t, stage, lane)
    lane_samples: dict = field(default_factory=dict)  # lane -> [(dev_cm, ang_deg)]
    switches: list = field(default_factory=list)  # SwitchRecord
    lanes_completed: int = 0
    failed: bool = False
    failure_reason: str = ""

    def lane_stats(self, lane):
        s = np.array(self.lane_samples.get(lane, []))
        if len(s) == 0:
            return None
        return (
            float(s[:, 0].mean()),
            float(s[:, 0].std()),
            float(s[:, 1].mean()),
            float(s[:, 1].std()),
            len(s),
        )


class Simulator:
    def __init__(self, fmap: FieldMap, cfg: SimConfig):
        self.fmap = fmap
        self.cfg = cfg
        self.renderer = Renderer(fmap, cfg.camera)
        self.row_end = fmap.row_end_x()
        self.row_start = float(fmap.plant_xy[:, 0].min()) if len(fmap.plant_xy) else 0.0
        # past the lane end the receding rows sit in the far half of the
        # view, so the lateral maneuver scans the full image height
        self.switch_scan = replace(
            cfg.scan, window_height=cfg.scan.image_height, require_near_content=False
        )

    # -- perception ------------------------------------------------------

    def perceive(self, pose, side):
        img = self.renderer.render(pose, side)
        mask = vegetation.segment(img)
        regions = vegetation.extract_regions(
            mask, self.cfg.track.max_region_height, self.cfg.track.min_region_area
        )
        return img, regions

    def acquire_trackers(self, regions):
        """Detect rows and keep the rows_per_lane most central ones."""
        centers = vegetation.region_centers(regions)
        rows = rowdetect.detect_rows(centers, self.cfg.scan)
        want = self.fmap.spec.rows_per_lane
        if len(rows) > want:
            cx = self.cfg.scan.image_width / 2.0
            rows = sorted(rows, key=lambda r: abs(r.ix - cx))[:want]
            rows = sorted(rows, key=lambda r: r.ix)
        if not rows:
            return []
        return rowtrack.init_trackers(rows, regions, self.cfg.track)

    # -- episode ---------------------------------------------------------

    def start_pose(self):
        rng = np.random.default_rng(self.cfg.seed)
        lane_y = float(self.fmap.lane_centerlines[0][0, 1])
        dy = rng.uniform(-1.0, 1.0) * self.cfg.start_offset_m
        dth = math.radians(rng.uniform(-1.0, 1.0) * self.cfg.start_heading_deg)
        return Pose(self.row_start - 1.0, lane_y + dy, dth)

    def run_episode(self, start_pose=None, start_state=None, debug_dir=None, stop_after_switch=False):
        cfg = self.cfg
        pose = start_pose if start_pose is not None else self.start_pose()
        state = start_state if start_state is not None else NavState(
            lane_count=cfg.lane_count,
            rows_per_lane=self.fmap.spec.rows_per_lane,
            row_spacing=self.fmap.spec.row_spacing,
        )
        result = EpisodeResult()
        result.transitions.append((0.0, state.stage, state.lane_index))

        trackers = []
        monitor = None
        active_side = state.active_camera
        clear_dist = 0.0
        odometer = 0.0
        t = 0.0
        frame = 0
        prev_stage = state.stage
        switch_rec = None
        if state.stage == STAGE_SWITCH:
            monitor = self._new_monitor(state)
            switch_rec = SwitchRecord(from_lane=state.lane_index)
            result.switches.append(switch_rec)

        while not state.done:
            if odometer > cfg.max_travel_m:
                result.failed = True
                result.failure_reason = (
                    f"travel budget {cfg.max_travel_m} m exceeded at t={t:.1f}s"
                )
                break

            if state.active_camera != active_side:
                active_side = state.active_camera
                trackers = []

            img, regions = self.perceive(pose, active_side)
            if debug_dir is not None:
                write_ppm(os.path.join(debug_dir, f"frame_{frame:05d}_{active_side}.ppm"), img)

            obs = Observations()
            if state.stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK, STAGE_EXIT):
                if trackers and any(not tr.lost for tr in trackers):
                    trackers = rowtrack.update_trackers(trackers, regions, cfg.track)
                else:
                    trackers = self.acquire_trackers(regions)
                live = [tr for tr in trackers if not tr.lost]
                obs.tracker_count = len(live)
                if live:
                    obs.feature = rowtrack.average_line(trackers, cfg.track)
                if state.stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK):
                    obs.lane_end_ahead = rowtrack.lane_end_ahead(trackers, regions, cfg.track)
                else:
                    obs.end_of_row = rowtrack.end_of_row(trackers, regions, cfg.track)
                    # the travel-facing camera must also be clear of rows
                    _, lead_regions = self.perceive(pose, state.leading_camera)
                    lead_rows = rowdetect.detect_rows(
                        vegetation.region_centers(lead_regions), cfg.scan
                    )
                    if lead_rows:
                        clear_dist = 0.0
                    obs.exit_clear = clear_dist >= EXIT_CLEAR_DISTANCE
            elif state.stage == STAGE_SWITCH:
                centers = vegetation.region_centers(regions)
                rows = rowdetect.detect_rows(centers, self.switch_scan)
                frame_trackers = (
                    rowtrack.init_trackers(rows, regions, cfg.track) if rows else []
                )
                if frame_trackers:
                    obs.feature = rowtrack.average_line(frame_trackers, cfg.track)
                anchor_y = bottom_center_ground(pose, cfg.camera, active_side)[1]
                event = monitor.update(frame, img, frame_trackers, anchor_y, pose.y)
                if event is not None:
                    obs.new_row = True
                    switch_rec.events.append(event)

            state, cmd = nav_step(state, obs, cfg.control, DT)

            result.trajectory.append((t, pose.x, pose.y, pose.theta, prev_stage))
            result.commands.append((t, cmd.v_x, cmd.u_y, cmd.omega))
            result.feature_log.append(
                (
                    t,
                    prev_stage,
                    active_side,
                    obs.feature.a_px if obs.feature else float("nan"),
                    obs.feature.theta_deg if obs.feature else float("nan"),
                    state.rows_crossed,
                )
            )

            if prev_stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK):
                lane = min(state.lane_index, self.fmap.lane_count - 1)
                dist, _, interior = polyline_distance(
                    (pose.x, pose.y), self.fmap.lane_centerlines[lane]
                )
                if interior:
                    dev, ang = ground_truth_errors(pose, self.fmap, lane)
                    result.lane_samples.setdefault(lane, []).append((dev, ang))

            if prev_stage == STAGE_EXIT:
                clear_dist += abs(cmd.v_x) * DT
            if prev_stage == STAGE_SWITCH and switch_rec is not None:
                switch_rec.lateral_path_m += abs(cmd.u_y) * DT

            pose = step_kinematics(pose, cmd, DT)
            odometer += math.hypot(cmd.v_x, cmd.u_y) * DT
            t += DT
            frame += 1

            if state.stage != prev_stage:
                result.transitions.append((t, state.stage, state.lane_index))
                if prev_stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK):
                    result.lanes_completed += 1
                if state.stage == STAGE_SWITCH:
                    monitor = self._new_monitor(state)
                    switch_rec = SwitchRecord(from_lane=state.lane_index)
                    result.switches.append(switch_rec)
                    clear_dist = 0.0
                if state.stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK):
                    monitor = None
                    if stop_after_switch and prev_stage == STAGE_SWITCH:
                        prev_stage = state.stage
                        break
                prev_stage = state.stage

        return result

    def _new_monitor(self, state: NavState):
        # new rows enter on the slide side in the rear view, mirrored in the
        # front view (the rear camera flips left and right)
        sign = state.switch_sign if state.trailing_camera == BACK else -state.switch_sign
        return rowid.NewRowMonitor(
            thresholds=self.cfg.switch, cfg=self.cfg.track, entering_sign=sign
        )


# -- artifact writers ------------------------------------------------------


def write_trajectory_csv(path, result: EpisodeResult):
    with open(path, "w") as f:
        f.write("t,x,y,theta,state\n")
        for t, x, y, th, st in result.trajectory:
            f.write("%.6f,%.6f,%.6f,%.9f,%d\n" % (t, x, y, th, st))


def write_metrics_csv(path, result: EpisodeResult):
    with open(path, "w") as f:
        f.write("lane,frames,mean_dev_cm,std_dev_cm,mean_ang_deg,std_ang_deg\n")
        for lane in sorted(result.lane_samples):
            mean_d, std_d, mean_a, std_a, n = result.lane_stats(lane)
            f.write("%d,%d,%.4f,%.4f,%.4f,%.4f\n" % (lane, n, mean_d, std_d, mean_a, std_a))


def write_episode_log(path, result: EpisodeResult):
    names = {
        STAGE_FOLLOW_FRONT: "follow_front",
        STAGE_EXIT: "exit",
        STAGE_SWITCH: "switch",
        STAGE_FOLLOW_BACK: "follow_back",
        STAGE_DONE: "done",
    }
    with open(path, "w") as f:
        for t, stage, lane in result.transitions:
            f.write("t=%.3f stage=%s lane=%d\n" % (t, names.get(stage, str(stage)), lane))
        if result.failed:
            f.write("FAILED: %s\n" % result.failure_reason)
        else:
            f.write("completed lanes=%d\n" % result.lanes_completed)


def write_switch_events_csv(path, result: EpisodeResult):
    with open(path, "w") as f:
        f.write("switch_idx,from_lane,event_idx,frame,robot_y,anchor_y,distance\n")
        for si, rec in enumerate(result.switches):
            for ei, ev in enumerate(rec.events):
                f.write(
                    "%d,%d,%d,%d,%.6f,%.6f,%.4f\n"
                    % (si, rec.from_lane, ei, ev.frame, ev.robot_y, ev.anchor_y, ev.distance)
                )


def write_guidance_log_csv(path, result: EpisodeResult):
    with open(path, "w") as f:
        f.write("t,state,cam,v_x,u_y,omega,a_px,theta_deg,rows_crossed\n")
        for (t, vx, uy, om), (_, stage, cam, a, th, rc) in zip(result.commands, result.feature_log):
            f.write(
                "%.6f,%d,%s,%.4f,%.4f,%.6f,%.3f,%.4f,%d\n"
                % (t, stage, cam, vx, uy, om, a, th, rc)
            )
