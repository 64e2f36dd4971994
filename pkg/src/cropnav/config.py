"""Run configuration: one plain-text file drives every subcommand.

Format is bracketed sections with ``key = value`` lines.  Every key has a
default (an empty file is a complete, runnable configuration); unknown
sections or keys fail fast with their name, as do values violating a
field's range.  Two crop profiles bundle the field geometry presets:
``wide55`` (2 rows per lane, 55 cm) and ``narrow35`` (3 rows, 35 cm).
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field as dc_field, replace

from .fieldsim import CameraModel, FieldSpec
from .guidance import ControlParams
from .rowdetect import ScanConfig
from .rowid import SwitchThresholds
from .rowtrack import TrackConfig

PROFILES = {
    "wide55": dict(
        rows_per_lane=2,
        row_spacing=0.55,
        plant_spacing=0.11,
        canopy_radius_mean=0.06,
        canopy_radius_std=0.012,
    ),
    "narrow35": dict(
        rows_per_lane=3,
        row_spacing=0.35,
        plant_spacing=0.10,
        canopy_radius_mean=0.052,
        canopy_radius_std=0.010,
    ),
}

# decision thresholds calibrated per profile with `cropnav calibrate-tau`
PROFILE_TAU = {"wide55": 0.49, "narrow35": 0.47}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeConfig:
    lane_count: int = 0  # lanes to traverse; 0 means all lanes in the field
    seed: int = 0
    max_travel_m: float = 150.0
    start_offset_m: float = 0.02
    start_heading_deg: float = 1.0


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    debug_images: bool = False


@dataclass(frozen=True)
class RunConfig:
    profile: str = "wide55"
    field: FieldSpec = dc_field(default_factory=lambda: FieldSpec(**PROFILES["wide55"]))
    camera: CameraModel = dc_field(default_factory=CameraModel)
    scan: ScanConfig = dc_field(default_factory=ScanConfig)
    track: TrackConfig = dc_field(default_factory=TrackConfig)
    control: ControlParams = dc_field(default_factory=ControlParams)
    switch: SwitchThresholds = dc_field(default_factory=SwitchThresholds)
    episode: EpisodeConfig = dc_field(default_factory=EpisodeConfig)
    output: OutputConfig = dc_field(default_factory=OutputConfig)

    @property
    def traverse_lanes(self):
        n = self.episode.lane_count
        return self.field.lane_count if n <= 0 else min(n, self.field.lane_count)


_SECTION_FIELDS = {
    "field": {
        "profile": str,
        "rows_per_lane": int,
        "row_spacing": float,
        "plant_spacing": float,
        "row_length": float,
        "lane_count": int,
        "germination_rate": float,
        "weed_density": float,
        "canopy_radius_mean": float,
        "canopy_radius_std": float,
        "row_waviness": float,
        "rng_seed": int,
    },
    "camera": {
        "height_m": float,
        "tilt_deg": float,
        "mount_offset_m": float,
        "width": int,
        "height_px": int,
        "focal_px": float,
    },
    "scan": {
        "window_width": int,
        "window_height": int,
        "step_count": int,
        "variance_window": int,
        "prominence_threshold": float,
        "trough_merge_gap": int,
        "trough_merge_tol": float,
        "min_support": int,
        "fit_inlier_tol": float,
        "refit_halfwidth": float,
        "trough_max_sigma2": float,
        "trough_min_support": int,
        "min_row_separation": float,
        "max_region_height": int,
        "min_region_area": int,
        "canopy_width_factor": float,
        "min_halfwidth": float,
        "max_halfwidth": float,
        "lost_after": int,
    },
    "control": {
        "k_a": float,
        "k_theta": float,
        "v_forward": float,
        "u_lateral": float,
        "omega_max": float,
    },
    "switch": {
        "match_ratio": float,
        "tau_c": float,
        "persistence": int,
        "min_matches": int,
        "max_keypoints": int,
    },
    "episode": {
        "lane_count": int,
        "seed": int,
        "max_travel_m": float,
        "start_offset_m": float,
        "start_heading_deg": float,
    },
    "output": {"directory": str, "debug_images": bool},
}


def _parse_value(section, key, raw, kind):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as bool")
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}")


def parse_config(text) -> RunConfig:
    """Parse configuration text; defaults fill every omitted key."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        where = f" at line {line}" if line else ""
        raise ConfigError(f"config syntax error{where}: {exc.message}")

    values = {}
    for section in cp.sections():
        if section not in _SECTION_FIELDS:
            raise ConfigError(f"unknown section [{section}]")
        known = _SECTION_FIELDS[section]
        for key, raw in cp.items(section):
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[(section, key)] = _parse_value(section, key, raw, known[key])

    def got(section, *names):
        return {k: values[(section, k)] for k in names if (section, k) in values}

    profile = values.get(("field", "profile"), "wide55")
    if profile not in PROFILES:
        raise ConfigError(f"profile: unknown crop profile {profile!r}")

    field_kwargs = dict(PROFILES[profile])
    field_kwargs.update(got("field", *(k for k in _SECTION_FIELDS["field"] if k != "profile")))
    fspec = FieldSpec(**field_kwargs)
    try:
        fspec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))

    camera = CameraModel(**got("camera", *_SECTION_FIELDS["camera"]))
    try:
        camera.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))

    scan = ScanConfig(
        image_width=camera.width,
        image_height=camera.height_px,
        **got(
            "scan",
            "window_width",
            "window_height",
            "step_count",
            "variance_window",
            "prominence_threshold",
            "trough_merge_gap",
            "trough_merge_tol",
            "min_support",
            "fit_inlier_tol",
            "refit_halfwidth",
            "trough_max_sigma2",
            "trough_min_support",
            "min_row_separation",
        ),
    )
    try:
        scan.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))

    track = TrackConfig(
        image_width=camera.width,
        image_height=camera.height_px,
        **got(
            "scan",
            "canopy_width_factor",
            "min_halfwidth",
            "max_halfwidth",
            "lost_after",
            "max_region_height",
            "min_region_area",
        ),
    )

    control = ControlParams(image_width=camera.width, **got("control", *_SECTION_FIELDS["control"]))
    if control.k_a <= 0 or control.k_theta <= 0 or control.omega_max <= 0:
        raise ConfigError("control gains and omega_max must be positive")
    if abs(control.v_forward) > 1.5 or abs(control.u_lateral) > 1.5:
        raise ConfigError("commanded speeds exceed the 1.5 m/s platform limit")

    switch_kwargs = got("switch", *_SECTION_FIELDS["switch"])
    switch_kwargs.setdefault("tau_c", PROFILE_TAU[profile])
    switch = SwitchThresholds(**switch_kwargs)
    try:
        switch.validate()
    except ValueError as exc:
        raise ConfigError(str(exc))

    episode = EpisodeConfig(**got("episode", *_SECTION_FIELDS["episode"]))
    output = OutputConfig(**got("output", *_SECTION_FIELDS["output"]))

    return RunConfig(
        profile=profile,
        field=fspec,
        camera=camera,
        scan=scan,
        track=track,
        control=control,
        switch=switch,
        episode=episode,
        output=output,
    )


def load_config(path) -> RunConfig:
    with open(path) as f:
        return parse_config(f.read())


def serialize_config(cfg: RunConfig) -> str:
    """Emit a config file that parses back to an identical RunConfig."""
    f, cam, sc, tr, ct, sw, ep, out = (
        cfg.field,
        cfg.camera,
        cfg.scan,
        cfg.track,
        cfg.control,
        cfg.switch,
        cfg.episode,
        cfg.output,
    )
    lines = [
        "[field]",
        f"profile = {cfg.profile}",
        f"rows_per_lane = {f.rows_per_lane}",
        f"row_spacing = {f.row_spacing!r}",
        f"plant_spacing = {f.plant_spacing!r}",
        f"row_length = {f.row_length!r}",
        f"lane_count = {f.lane_count}",
        f"germination_rate = {f.germination_rate!r}",
        f"weed_density = {f.weed_density!r}",
        f"canopy_radius_mean = {f.canopy_radius_mean!r}",
        f"canopy_radius_std = {f.canopy_radius_std!r}",
        f"row_waviness = {f.row_waviness!r}",
        f"rng_seed = {f.rng_seed}",
        "",
        "[camera]",
        f"height_m = {cam.height_m!r}",
        f"tilt_deg = {cam.tilt_deg!r}",
        f"mount_offset_m = {cam.mount_offset_m!r}",
        f"width = {cam.width}",
        f"height_px = {cam.height_px}",
        f"focal_px = {cam.focal_px!r}",
        "",
        "[scan]",
        f"window_width = {sc.window_width}",
        f"window_height = {sc.window_height}",
        f"step_count = {sc.step_count}",
        f"variance_window = {sc.variance_window}",
        f"prominence_threshold = {sc.prominence_threshold!r}",
        f"trough_merge_gap = {sc.trough_merge_gap}",
        f"trough_merge_tol = {sc.trough_merge_tol!r}",
        f"min_support = {sc.min_support}",
        f"fit_inlier_tol = {sc.fit_inlier_tol!r}",
        f"refit_halfwidth = {sc.refit_halfwidth!r}",
        f"trough_max_sigma2 = {sc.trough_max_sigma2!r}",
        f"trough_min_support = {sc.trough_min_support}",
        f"min_row_separation = {sc.min_row_separation!r}",
        f"max_region_height = {tr.max_region_height}",
        f"min_region_area = {tr.min_region_area}",
        f"canopy_width_factor = {tr.canopy_width_factor!r}",
        f"min_halfwidth = {tr.min_halfwidth!r}",
        f"max_halfwidth = {tr.max_halfwidth!r}",
        f"lost_after = {tr.lost_after}",
        "",
        "[control]",
        f"k_a = {ct.k_a!r}",
        f"k_theta = {ct.k_theta!r}",
        f"v_forward = {ct.v_forward!r}",
        f"u_lateral = {ct.u_lateral!r}",
        f"omega_max = {ct.omega_max!r}",
        "",
        "[switch]",
        f"match_ratio = {sw.match_ratio!r}",
        f"tau_c = {sw.tau_c!r}",
        f"persistence = {sw.persistence}",
        f"min_matches = {sw.min_matches}",
        f"max_keypoints = {sw.max_keypoints}",
        "",
        "[episode]",
        f"lane_count = {ep.lane_count}",
        f"seed = {ep.seed}",
        f"max_travel_m = {ep.max_travel_m!r}",
        f"start_offset_m = {ep.start_offset_m!r}",
        f"start_heading_deg = {ep.start_heading_deg!r}",
        "",
        "[output]",
        f"directory = {out.directory}",
        f"debug_images = {out.debug_images}",
        "",
    ]
    return "\n".join(lines)


def with_seed(cfg: RunConfig, seed) -> RunConfig:
    """Same configuration with field and episode seeds replaced."""
    return replace(
        cfg,
        field=replace(cfg.field, rng_seed=seed),
        episode=replace(cfg.episode, seed=seed),
    )


def sim_config(cfg: RunConfig):
    """Assemble the simulation-loop section bundle from a RunConfig."""
    from .simloop import SimConfig

    return SimConfig(
        camera=cfg.camera,
        scan=cfg.scan,
        track=cfg.track,
        control=cfg.control,
        switch=cfg.switch,
        lane_count=cfg.traverse_lanes,
        max_travel_m=cfg.episode.max_travel_m,
        seed=cfg.episode.seed,
        start_offset_m=cfg.episode.start_offset_m,
        start_heading_deg=cfg.episode.start_heading_deg,
    )
