"""Velocity commands and the four-stage lane navigation state machine.

Row following runs at a fixed forward speed with a saturated proportional
yaw law on the guidance feature error (bottom-intersection offset and
line angle); lane switching is a pure lateral slide that counts crossed
rows.  One cycle is: follow the lane with the travel-facing camera (1),
drive past its end guided by the rear-facing camera (2), slide sideways
while counting rows (3), then follow the next lane in the opposite travel
direction (4).  Travel direction alternates per lane, so the "front" role
swaps between the two physical cameras while the lateral shift always
advances toward higher lane indices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .fieldsim import BACK, FRONT
from .rowtrack import GuidanceFeature

STAGE_FOLLOW_FRONT = 1
STAGE_EXIT = 2
STAGE_SWITCH = 3
STAGE_FOLLOW_BACK = 4
STAGE_DONE = 0

V_MAX = 1.5  # platform limit, m/s


class BadObservation(Exception):
    """Observation set inconsistent with the current stage."""


@dataclass(frozen=True)
class VelocityCommand:
    v_x: float = 0.0  # forward, robot frame
    u_y: float = 0.0  # lateral, positive toward higher lane index
    omega: float = 0.0  # yaw rate

    def __post_init__(self):
        if abs(self.v_x) > V_MAX:
            raise ValueError(f"|v_x| = {abs(self.v_x)} exceeds platform max {V_MAX}")


@dataclass(frozen=True)
class ControlParams:
    k_a: float = 1.0  # per normalized pixel offset
    k_theta: float = 2.0  # per radian
    v_forward: float = 0.3
    u_lateral: float = 0.15
    omega_max: float = 0.5
    image_width: int = 1280


def follow_cmd(feature: GuidanceFeature, p: ControlParams, direction=1):
    """Fixed-speed following; yaw is proportional to the feature error."""
    err = p.k_a * (2.0 * feature.a_px / p.image_width) + p.k_theta * feature.theta_rad
    omega = -max(-p.omega_max, min(p.omega_max, err))
    return VelocityCommand(v_x=direction * p.v_forward, u_y=0.0, omega=omega)


def switch_cmd(direction_sign, p: ControlParams, feature: GuidanceFeature = None):
    """Pure lateral slide; holds heading on the rows when they are visible."""
    omega = 0.0
    if feature is not None:
        omega = -max(-p.omega_max, min(p.omega_max, p.k_theta * feature.theta_rad))
    return VelocityCommand(v_x=0.0, u_y=direction_sign * p.u_lateral, omega=omega)


@dataclass
class Observations:
    """Per-frame inputs to nav_step, computed by the simulation loop."""

    feature: GuidanceFeature = None  # active camera, raw (not mirrored)
    lane_end_ahead: bool = False  # travel-facing camera: lane runs out
    end_of_row: bool = False  # rear-facing camera: lane fully receded
    exit_clear: bool = False  # travel-facing camera empty for >= 1 m
    new_row: bool = False  # row-crossing event during a switch
    tracker_count: int = 0  # live trackers on the active camera


@dataclass
class NavState:
    lane_count: int
    rows_per_lane: int
    row_spacing: float
    switch_sign: int = 1  # +1 slides toward higher lane index
    lane_index: int = 0
    stage: int = STAGE_FOLLOW_FRONT
    rows_to_cross: int = 0
    rows_crossed: int = 0
    nudge_remaining: float = 0.0

    @property
    def travel_sign(self):
        return 1 if self.lane_index % 2 == 0 else -1

    @property
    def leading_camera(self):
        return FRONT if self.travel_sign > 0 else BACK

    @property
    def trailing_camera(self):
        return BACK if self.travel_sign > 0 else FRONT

    @property
    def active_camera(self):
        if self.stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK):
            return self.leading_camera
        return self.trailing_camera

    @property
    def done(self):
        return self.stage == STAGE_DONE

    def follow_stage_label(self):
        return STAGE_FOLLOW_FRONT if self.leading_camera == FRONT else STAGE_FOLLOW_BACK


def nav_step(state: NavState, obs: Observations, p: ControlParams, dt: float):
    """Advance the state machine one frame; returns (state, command).

    The state object is mutated in place and also returned.  Exactly one
    command is emitted per call, from follow_cmd or switch_cmd.
    """
    if state.stage in (STAGE_FOLLOW_FRONT, STAGE_FOLLOW_BACK):
        if obs.feature is None:
            cmd = VelocityCommand(v_x=state.travel_sign * p.v_forward)
        else:
            cmd = follow_cmd(obs.feature, p, direction=state.travel_sign)
        if obs.lane_end_ahead:
            state.rows_to_cross = obs.tracker_count or state.rows_per_lane
            if state.lane_index + 1 >= state.lane_count:
                state.stage = STAGE_DONE
                return state, VelocityCommand()
            state.stage = STAGE_EXIT
        return state, cmd

    if state.stage == STAGE_EXIT:
        # rear-facing camera guides; its view is mirrored, so the feature
        # error changes sign for the still-forward travel
        if obs.feature is None:
            cmd = VelocityCommand(v_x=state.travel_sign * p.v_forward)
        else:
            cmd = follow_cmd(obs.feature.mirrored(), p, direction=state.travel_sign)
        if obs.end_of_row and obs.exit_clear:
            state.stage = STAGE_SWITCH
            state.rows_crossed = 0
            # even row counts land between rows: finish with a half-pitch
            state.nudge_remaining = (
                state.row_spacing / 2.0 if state.rows_per_lane % 2 == 0 else 0.0
            )
        return state, cmd

    if state.stage == STAGE_SWITCH:
        feature = obs.feature.mirrored() if obs.feature is not None else None
        cmd = switch_cmd(state.switch_sign, p, feature)
        if state.rows_crossed >= state.rows_to_cross:
            state.nudge_remaining -= abs(cmd.u_y) * dt
            if state.nudge_remaining <= 0.0:
                state.lane_index += 1
                state.stage = state.follow_stage_label()
                state.rows_crossed = 0
            return state, cmd
        if obs.new_row:
            state.rows_crossed += 1
        return state, cmd

    if state.stage == STAGE_DONE:
        return state, VelocityCommand()
    raise BadObservation(f"unknown stage {state.stage}")
