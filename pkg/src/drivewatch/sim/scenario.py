"""Scenario files: versioned JSON schema, validation with field paths, and
time-indexed access to the scripted world.

One scenario file fully determines a run: road geometry and camera, vehicle
speed profile, obstacle tracks, the driver script, bus overrides and fault
injections, and every rule threshold. The reserved ``topview`` section is
accepted but unimplemented.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from ..decision import ObstacleTrack, RuleConfig
from ..driver import DriverConfig, GazeConfig, WheelEllipse
from ..geometry import CameraIntrinsics, Homography, perspective_from_quads
from ..lanes import LaneConfig, MetricScale

SCHEMA_VERSION = 1

BUILTIN_SCENARIOS = ("nominal_cruise", "drowsy_driver", "distracted_driver",
                     "rear_end", "arc_300m", "offset_left")


class ScenarioError(ValueError):
    """Schema violation, reported with the offending field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


def _get(d: dict, key: str, path: str, kind, required=True, default=None):
    if key not in d:
        if required:
            raise ScenarioError(f"{path}.{key}", "missing required field")
        return default
    value = d[key]
    if kind is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, kind):
        raise ScenarioError(f"{path}.{key}",
                            f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _profile(value, path: str) -> list[tuple[float, float]]:
    """A constant or a [[t, v], ...] piecewise-linear profile."""
    if isinstance(value, (int, float)):
        return [(0.0, float(value))]
    if isinstance(value, list) and value and all(
            isinstance(p, list) and len(p) == 2 for p in value):
        pts = [(float(t), float(v)) for t, v in value]
        if any(b[0] < a[0] for a, b in zip(pts, pts[1:])):
            raise ScenarioError(path, "profile times must be non-decreasing")
        return pts
    raise ScenarioError(path, "expected a number or [[t, value], ...] pairs")


def _interp(profile: list[tuple[float, float]], t: float) -> float:
    ts = [p[0] for p in profile]
    vs = [p[1] for p in profile]
    return float(np.interp(t, ts, vs))


@dataclass(frozen=True)
class ObstacleScript:
    bearing: str
    t_start: float
    t_end: float
    range_m: float
    closing_speed_mps: float

    def track_at(self, t: float) -> Optional[ObstacleTrack]:
        if not self.t_start <= t <= self.t_end:
            return None
        rng = max(self.range_m - self.closing_speed_mps * (t - self.t_start),
                  0.0)
        return ObstacleTrack(rng, self.closing_speed_mps, self.bearing)


@dataclass(frozen=True)
class DriverEvent:
    t: float
    kind: str
    yaw_deg: float = 0.0
    pitch_deg: float = 0.0
    roll_deg: float = 0.0
    duration_s: float = 0.0


@dataclass(frozen=True)
class DriverScriptState:
    eyes_closed: bool
    yaw: float
    pitch: float
    roll: float
    hands_on: bool


@dataclass(frozen=True)
class BusOverride:
    t: float
    signal: str
    value: float


@dataclass(frozen=True)
class FaultInjection:
    t: float
    ecu: str
    code: str


@dataclass(frozen=True)
class Scenario:
    name: str
    duration_s: float
    frame_rate_hz: float
    seed: int
    # camera / road geometry
    camera: CameraIntrinsics
    image_size: tuple[int, int]          # (w, h) of the road camera
    warp_size: tuple[int, int]           # (w, h) of the bird's-eye view
    homography: Homography               # camera -> bird's-eye
    scale: MetricScale
    lane_width_m: float
    stripe_width_px: int
    shoulder_px: int
    curvature_kind: str                  # "straight" | "arc"
    arc_radius_m: float
    arc_direction: str                   # "left" | "right"
    offset_profile: list[tuple[float, float]]
    segmentation_source: str             # "ground_truth" | "network"
    weights_path: Optional[str]
    # vehicle + traffic
    speed_profile: list[tuple[float, float]]
    traffic_speed_kmh: Optional[float]
    # driver
    driver_camera: CameraIntrinsics
    driver_image_size: tuple[int, int]
    driver_distance: float
    driver_noise_px: float
    wheel_ellipse: WheelEllipse
    driver_events: tuple[DriverEvent, ...]
    # world and scripts
    world_defaults: dict
    bus_overrides: tuple[BusOverride, ...]
    fault_injections: tuple[FaultInjection, ...]
    obstacles: tuple[ObstacleScript, ...]
    rules: RuleConfig
    lane_config: LaneConfig
    driver_config: DriverConfig = field(default_factory=DriverConfig)

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s * self.frame_rate_hz))

    def frame_time(self, index: int) -> float:
        return index / self.frame_rate_hz

    def speed_at(self, t: float) -> float:
        return _interp(self.speed_profile, t)

    def offset_at(self, t: float) -> float:
        return _interp(self.offset_profile, t)

    def obstacles_at(self, t: float) -> tuple[ObstacleTrack, ...]:
        tracks = [s.track_at(t) for s in self.obstacles]
        return tuple(tr for tr in tracks if tr is not None)

    def driver_state_at(self, t: float) -> DriverScriptState:
        closed = False
        yaw = pitch = roll = 0.0
        hands = True
        blink_until = -1.0
        for ev in self.driver_events:
            if ev.t > t:
                break
            if ev.kind == "eyes_close":
                closed = True
            elif ev.kind == "eyes_open":
                closed = False
            elif ev.kind == "blink":
                blink_until = ev.t + ev.duration_s
            elif ev.kind == "gaze":
                yaw, pitch, roll = ev.yaw_deg, ev.pitch_deg, ev.roll_deg
            elif ev.kind == "gaze_road":
                yaw = pitch = roll = 0.0
            elif ev.kind == "hands_off":
                hands = False
            elif ev.kind == "hands_on":
                hands = True
        if t < blink_until:
            closed = True
        return DriverScriptState(closed, yaw, pitch, roll, hands)

    def world_at(self, t: float) -> dict:
        world = dict(self.world_defaults)
        speed = self.speed_at(t)
        world["vehicle_speed"] = speed
        world.setdefault("engine_rpm", 800.0 + 30.0 * speed)
        for w in ("wheel_speed_fl", "wheel_speed_fr", "wheel_speed_rl",
                  "wheel_speed_rr"):
            world.setdefault(w, speed)
        for override in self.bus_overrides:
            if override.t <= t:
                world[override.signal] = override.value
        return world


_WORLD_DEFAULTS = {
    "engine_status": 2, "throttle_pct": 15.0, "accel_pedal_deg": 8.0,
    "battery_v": 12.6, "mileage": 42000, "gear_ratio": 1.32,
    "engine_config": 7, "oil_pressure": 0, "airbag_status": 0,
    "shock_sensor": 0, "switch_states": 0, "lamp_states": 0,
    "door_states": 0, "mirror_states": 0, "handbrake": 0, "brake_pedal": 0,
    "seatbelt": 1, "fuel_level": 64.0, "temp_out": 18.0, "temp_in": 22.0,
    "brake_oil_level": 0, "cruise_on": 0, "cruise_target": 0.0,
    "central_lock": 1, "key_position": 2,
}

_EVENT_KINDS = ("eyes_close", "eyes_open", "blink", "gaze", "gaze_road",
                "hands_off", "hands_on")


def _parse_quad(raw, path: str):
    if (not isinstance(raw, list) or len(raw) != 4
            or any(not isinstance(p, list) or len(p) != 2 for p in raw)):
        raise ScenarioError(path, "expected 4 [x, y] points")
    return [(float(x), float(y)) for x, y in raw]


def parse_scenario(doc: dict, source: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError(source, "top level must be an object")
    version = _get(doc, "version", source, int)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{source}.version",
                            f"unsupported version {version}")
    name = _get(doc, "name", source, str)
    duration = _get(doc, "duration_s", source, float)
    rate = _get(doc, "frame_rate_hz", source, float)
    seed = _get(doc, "seed", source, int)
    if duration <= 0:
        raise ScenarioError(f"{source}.duration_s", "must be positive")
    if not 1.0 <= rate <= 120.0:
        raise ScenarioError(f"{source}.frame_rate_hz", "must be in [1, 120]")

    cam_doc = _get(doc, "camera", source, dict)
    cpath = f"{source}.camera"
    camera = CameraIntrinsics(
        fx=_get(cam_doc, "fx", cpath, float),
        fy=_get(cam_doc, "fy", cpath, float),
        cx=_get(cam_doc, "cx", cpath, float),
        cy=_get(cam_doc, "cy", cpath, float),
        k1=_get(cam_doc, "k1", cpath, float, required=False, default=0.0),
        k2=_get(cam_doc, "k2", cpath, float, required=False, default=0.0),
        k3=_get(cam_doc, "k3", cpath, float, required=False, default=0.0),
        p1=_get(cam_doc, "p1", cpath, float, required=False, default=0.0),
        p2=_get(cam_doc, "p2", cpath, float, required=False, default=0.0),
    )
    image_size = (_get(cam_doc, "image_width", cpath, int),
                  _get(cam_doc, "image_height", cpath, int))
    warp_size = (_get(cam_doc, "warp_width", cpath, int),
                 _get(cam_doc, "warp_height", cpath, int))
    src = _parse_quad(_get(cam_doc, "src_quad", cpath, list), f"{cpath}.src_quad")
    dst = _parse_quad(_get(cam_doc, "dst_quad", cpath, list), f"{cpath}.dst_quad")
    homography = perspective_from_quads(src, dst)

    road_doc = _get(doc, "road", source, dict)
    rpath = f"{source}.road"
    scale = MetricScale(_get(road_doc, "xm_per_px", rpath, float),
                        _get(road_doc, "ym_per_px", rpath, float))
    curvature = _get(road_doc, "curvature", rpath, dict,
                     required=False, default={"kind": "straight"})
    ckind = _get(curvature, "kind", f"{rpath}.curvature", str)
    if ckind not in ("straight", "arc"):
        raise ScenarioError(f"{rpath}.curvature.kind", f"unknown kind {ckind!r}")
    radius = _get(curvature, "radius_m", f"{rpath}.curvature", float,
                  required=(ckind == "arc"), default=0.0)
    direction = _get(curvature, "direction", f"{rpath}.curvature", str,
                     required=False, default="right")
    if direction not in ("left", "right"):
        raise ScenarioError(f"{rpath}.curvature.direction",
                            f"unknown direction {direction!r}")
    seg_source = _get(road_doc, "segmentation", rpath, str,
                      required=False, default="ground_truth")
    if seg_source not in ("ground_truth", "network"):
        raise ScenarioError(f"{rpath}.segmentation",
                            f"unknown source {seg_source!r}")

    vehicle_doc = _get(doc, "vehicle", source, dict)
    vpath = f"{source}.vehicle"
    speed_profile = _profile(vehicle_doc.get("speed_kmh", 0.0),
                             f"{vpath}.speed_kmh")
    traffic = vehicle_doc.get("traffic_speed_kmh")
    if traffic is not None and not isinstance(traffic, (int, float)):
        raise ScenarioError(f"{vpath}.traffic_speed_kmh", "expected a number")

    driver_doc = _get(doc, "driver", source, dict)
    dpath = f"{source}.driver"
    dcam_doc = _get(driver_doc, "camera", dpath, dict)
    driver_camera = CameraIntrinsics(
        fx=_get(dcam_doc, "fx", f"{dpath}.camera", float),
        fy=_get(dcam_doc, "fy", f"{dpath}.camera", float),
        cx=_get(dcam_doc, "cx", f"{dpath}.camera", float),
        cy=_get(dcam_doc, "cy", f"{dpath}.camera", float),
    )
    driver_image_size = (
        _get(dcam_doc, "image_width", f"{dpath}.camera", int),
        _get(dcam_doc, "image_height", f"{dpath}.camera", int))
    wheel_doc = _get(driver_doc, "wheel_ellipse", dpath, dict)
    wheel = WheelEllipse(
        cx=_get(wheel_doc, "cx", f"{dpath}.wheel_ellipse", float),
        cy=_get(wheel_doc, "cy", f"{dpath}.wheel_ellipse", float),
        rx=_get(wheel_doc, "rx", f"{dpath}.wheel_ellipse", float),
        ry=_get(wheel_doc, "ry", f"{dpath}.wheel_ellipse", float))
    events = []
    for i, ev in enumerate(driver_doc.get("events", [])):
        epath = f"{dpath}.events[{i}]"
        kind = _get(ev, "kind", epath, str)
        if kind not in _EVENT_KINDS:
            raise ScenarioError(f"{epath}.kind", f"unknown event {kind!r}")
        t = _get(ev, "t", epath, float)
        if not 0.0 <= t <= duration:
            raise ScenarioError(f"{epath}.t", "event time outside duration")
        events.append(DriverEvent(
            t=t, kind=kind,
            yaw_deg=_get(ev, "yaw_deg", epath, float, required=False,
                         default=0.0),
            pitch_deg=_get(ev, "pitch_deg", epath, float, required=False,
                           default=0.0),
            roll_deg=_get(ev, "roll_deg", epath, float, required=False,
                          default=0.0),
            duration_s=_get(ev, "duration_s", epath, float, required=False,
                            default=0.0)))
    events.sort(key=lambda e: e.t)

    obstacles = []
    for i, ob in enumerate(doc.get("obstacles", [])):
        opath = f"{source}.obstacles[{i}]"
        bearing = _get(ob, "bearing", opath, str)
        if bearing not in ("ahead", "behind"):
            raise ScenarioError(f"{opath}.bearing", f"unknown {bearing!r}")
        t_start = _get(ob, "t_start", opath, float)
        t_end = _get(ob, "t_end", opath, float)
        if not 0.0 <= t_start <= t_end <= duration:
            raise ScenarioError(f"{opath}.t_start", "times outside duration")
        obstacles.append(ObstacleScript(
            bearing, t_start, t_end,
            _get(ob, "range_m", opath, float),
            _get(ob, "closing_speed_mps", opath, float)))

    bus_doc = doc.get("bus", {})
    overrides = []
    for i, ov in enumerate(bus_doc.get("overrides", [])):
        opath = f"{source}.bus.overrides[{i}]"
        overrides.append(BusOverride(
            _get(ov, "t", opath, float),
            _get(ov, "signal", opath, str),
            _get(ov, "value", opath, float)))
    faults = []
    for i, fl in enumerate(bus_doc.get("faults", [])):
        fpath = f"{source}.bus.faults[{i}]"
        faults.append(FaultInjection(
            _get(fl, "t", fpath, float),
            _get(fl, "ecu", fpath, str),
            _get(fl, "code", fpath, str)))

    world = dict(_WORLD_DEFAULTS)
    world.update(doc.get("world", {}))

    rules_doc = doc.get("rules", {})
    rules_kwargs = dict(rules_doc)
    rules_kwargs.setdefault("speed_limit_kmh",
                            vehicle_doc.get("speed_limit_kmh", 60.0))
    rules_kwargs.setdefault("ym_per_px", scale.ym_per_px)
    try:
        rules = RuleConfig(**rules_kwargs)
    except TypeError as exc:
        raise ScenarioError(f"{source}.rules", str(exc)) from exc

    lane_kwargs = doc.get("lane_tracking", {})
    try:
        lane_cfg = LaneConfig(**{k: tuple(v) if isinstance(v, list) else v
                                 for k, v in lane_kwargs.items()})
    except TypeError as exc:
        raise ScenarioError(f"{source}.lane_tracking", str(exc)) from exc

    return Scenario(
        name=name, duration_s=duration, frame_rate_hz=rate, seed=seed,
        camera=camera, image_size=image_size, warp_size=warp_size,
        homography=homography, scale=scale,
        lane_width_m=_get(road_doc, "lane_width_m", rpath, float),
        stripe_width_px=_get(road_doc, "stripe_width_px", rpath, int,
                             required=False, default=10),
        shoulder_px=_get(road_doc, "shoulder_px", rpath, int,
                         required=False, default=40),
        curvature_kind=ckind, arc_radius_m=radius, arc_direction=direction,
        offset_profile=_profile(road_doc.get("lateral_offset_m", 0.0),
                                f"{rpath}.lateral_offset_m"),
        segmentation_source=seg_source,
        weights_path=road_doc.get("weights"),
        speed_profile=speed_profile,
        traffic_speed_kmh=float(traffic) if traffic is not None else None,
        driver_camera=driver_camera, driver_image_size=driver_image_size,
        driver_distance=_get(driver_doc, "distance", dpath, float,
                             required=False, default=420.0),
        driver_noise_px=_get(driver_doc, "noise_px", dpath, float,
                             required=False, default=0.0),
        wheel_ellipse=wheel, driver_events=tuple(events),
        world_defaults=world, bus_overrides=tuple(overrides),
        fault_injections=tuple(faults), obstacles=tuple(obstacles),
        rules=rules, lane_config=lane_cfg,
    )


def load_scenario(path) -> Scenario:
    with open(path, "r") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(str(path), f"invalid JSON: {exc}") from exc
    return parse_scenario(doc, source=str(path))


def builtin_scenario_path(name: str):
    if name not in BUILTIN_SCENARIOS:
        raise ScenarioError(name, f"unknown builtin scenario; "
                            f"have {', '.join(BUILTIN_SCENARIOS)}")
    return resources.files("drivewatch").joinpath(
        f"data/scenarios/{name}.json")


def load_builtin(name: str) -> Scenario:
    ref = builtin_scenario_path(name)
    with ref.open("r") as fh:
        doc = json.load(fh)
    return parse_scenario(doc, source=name)


def ground_truth_onsets(scenario: Scenario) -> list[tuple[float, str]]:
    """Driver-error onset markers implied by the script (for latency
    measurement): sustained eye closure, gaze leaving the road, hands off."""
    gaze_cfg = GazeConfig()
    onsets = []
    closed = False
    offroad = False
    hands = True
    for ev in scenario.driver_events:
        if ev.kind == "eyes_close" and not closed:
            onsets.append((ev.t, "drowsiness"))
            closed = True
        elif ev.kind == "eyes_open":
            closed = False
        elif ev.kind == "gaze":
            off = (abs(ev.yaw_deg) > gaze_cfg.road_yaw
                   or abs(ev.pitch_deg) > gaze_cfg.road_pitch)
            if off and not offroad:
                onsets.append((ev.t, "distraction"))
            offroad = off
        elif ev.kind == "gaze_road":
            offroad = False
        elif ev.kind == "hands_off" and hands:
            onsets.append((ev.t, "hands_off"))
            hands = False
        elif ev.kind == "hands_on":
            hands = True
    return onsets
