"""Rule-based safety engine: fuses lane estimate, driver state, free space,
obstacle tracks, and the vehicle snapshot into alerts and, in semi-automated
mode, control commands.

Rules run in a fixed priority order (collision rules, then driver rules,
then comfort/maintenance) so the alert stream is reproducible. Alerts are
mode-independent; commands are emitted only in semi_automated mode, and a
takeover only ever rides on a critical alert.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .bus.ecus import COMMAND_TABLE, SignalSnapshot
from .driver import DriverState
from .lanes import FreeSpace, LaneEstimate

MODES = ("manual", "semi_automated")
SEVERITIES = ("info", "warn", "critical")

ALERT_KINDS = ("speeding", "lane_departure", "obstacle_ahead",
               "rear_end_risk", "rear_approach", "surround_crash",
               "slow_traffic", "maintenance", "drowsiness", "distraction",
               "hands_off")


class DecisionError(ValueError):
    pass


class StaleInputError(DecisionError):
    """Inputs carried a different tick time than the evaluation clock."""


@dataclass(frozen=True)
class Alert:
    kind: str
    severity: str
    t: float
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ControlCommand:
    kind: str
    magnitude: Optional[float] = None

    def __post_init__(self):
        if self.kind not in COMMAND_TABLE:
            raise DecisionError(
                f"command kind {self.kind!r} not accepted by the bus whitelist")


@dataclass(frozen=True)
class ObstacleTrack:
    range_m: float
    closing_speed_mps: float  # positive = approaching
    bearing: str  # "ahead" | "behind"

    def __post_init__(self):
        if self.range_m < 0:
            raise DecisionError("obstacle range must be non-negative")
        if self.bearing not in ("ahead", "behind"):
            raise DecisionError(f"unknown bearing {self.bearing!r}")


@dataclass(frozen=True)
class RuleConfig:
    speed_limit_kmh: float = 60.0
    ttc_warn_s: float = 3.0
    ttc_crit_s: float = 1.5
    lane_offset_warn_m: float = 0.6
    lane_jump_warn_m_per_frame: float = 0.5
    slow_traffic_margin_kmh: float = 20.0
    battery_min_v: float = 11.5
    brake_decel_mps2: float = 6.0
    ym_per_px: float = 30.0 / 720.0

    def __post_init__(self):
        if not self.ttc_crit_s < self.ttc_warn_s:
            raise DecisionError("ttc_crit_s must be below ttc_warn_s")
        for name in ("speed_limit_kmh", "ttc_warn_s", "ttc_crit_s",
                     "lane_offset_warn_m", "lane_jump_warn_m_per_frame",
                     "slow_traffic_margin_kmh", "battery_min_v",
                     "brake_decel_mps2", "ym_per_px"):
            if getattr(self, name) <= 0:
                raise DecisionError(f"{name} must be positive")


@dataclass(frozen=True)
class DecisionInput:
    t: float
    snapshot: SignalSnapshot
    lane: Optional[LaneEstimate] = None
    driver: Optional[DriverState] = None
    freespace: Optional[FreeSpace] = None
    obstacles: tuple[ObstacleTrack, ...] = ()
    traffic_speed_kmh: Optional[float] = None


@dataclass(frozen=True)
class DecisionState:
    prev_offset_m: Optional[float] = None


def ttc(range_m: float, closing_speed_mps: float) -> float:
    """Time to collision; infinite when the gap is not closing."""
    if range_m < 0:
        raise DecisionError("range must be non-negative")
    if closing_speed_mps <= 0:
        return math.inf
    return range_m / closing_speed_mps


def _min_ttc(obstacles, bearing) -> tuple[float, Optional[ObstacleTrack]]:
    best, best_track = math.inf, None
    for track in obstacles:
        if track.bearing != bearing:
            continue
        value = ttc(track.range_m, track.closing_speed_mps)
        if value < best:
            best, best_track = value, track
    return best, best_track


def evaluate(
    tick: DecisionInput,
    mode: str,
    config: RuleConfig = RuleConfig(),
    state: DecisionState = DecisionState(),
) -> tuple[list[Alert], list[ControlCommand], DecisionState]:
    """One rule pass over a tick's fused inputs.

    Pure in (tick, mode, config, state); refuses stale inputs whose own
    timestamps disagree with the tick time.
    """
    if mode not in MODES:
        raise DecisionError(f"unknown mode {mode!r}")
    t = tick.t
    for label, stamped in (("driver", tick.driver), ("snapshot", tick.snapshot)):
        if stamped is not None and abs(stamped.t - t) > 1e-9:
            raise StaleInputError(
                f"{label} input stamped {stamped.t}, tick is {t}")

    snap = tick.snapshot
    speed_kmh = snap.vehicle_speed
    speed_mps = speed_kmh / 3.6
    alerts: list[Alert] = []
    takeover = False
    decelerate = False

    # -- critical collision rules -------------------------------------------
    if (snap.airbag_status not in (None, 0)) or snap.shock_sensor:
        alerts.append(Alert("surround_crash", "critical", t, {
            "airbag_status": snap.airbag_status,
            "shock_sensor": bool(snap.shock_sensor)}))

    ahead_ttc, ahead_track = _min_ttc(tick.obstacles, "ahead")
    if ahead_ttc < config.ttc_warn_s:
        severity = "critical" if ahead_ttc < config.ttc_crit_s else "warn"
        alerts.append(Alert("rear_end_risk", severity, t, {
            "ttc_s": ahead_ttc, "range_m": ahead_track.range_m}))
        if severity == "critical":
            decelerate = True
            takeover = True

    behind_ttc, behind_track = _min_ttc(tick.obstacles, "behind")
    if behind_ttc < config.ttc_warn_s:
        severity = "critical" if behind_ttc < config.ttc_crit_s else "warn"
        alerts.append(Alert("rear_approach", severity, t, {
            "ttc_s": behind_ttc, "range_m": behind_track.range_m}))

    if tick.freespace is not None and tick.freespace.blocked and speed_mps > 0:
        clear_m = tick.freespace.clear_rows * config.ym_per_px
        braking_m = speed_mps ** 2 / (2.0 * config.brake_decel_mps2)
        if clear_m < braking_m:
            alerts.append(Alert("obstacle_ahead", "warn", t, {
                "clear_m": clear_m, "braking_m": braking_m}))

    # -- driver rules --------------------------------------------------------
    drv = tick.driver
    if drv is not None:
        if drv.drowsy:
            severity = "critical" if speed_kmh > 10.0 else "warn"
            alerts.append(Alert("drowsiness", severity, t,
                                {"ear": drv.eye.ear_mean}))
            if severity == "critical":
                takeover = True
        if drv.distracted:
            alerts.append(Alert("distraction", "warn", t, {"gaze": drv.gaze}))
        if not drv.hands_on_wheel:
            alerts.append(Alert("hands_off", "warn", t, {}))

    # -- comfort and maintenance ---------------------------------------------
    if speed_kmh > config.speed_limit_kmh:
        alerts.append(Alert("speeding", "warn", t, {
            "speed_kmh": speed_kmh, "limit_kmh": config.speed_limit_kmh}))

    new_offset = state.prev_offset_m
    if tick.lane is not None and tick.lane.locked and tick.lane.confidence > 0:
        offset = tick.lane.lateral_offset_m
        jump = (abs(offset - state.prev_offset_m)
                if state.prev_offset_m is not None else 0.0)
        if abs(offset) > config.lane_offset_warn_m or \
                jump > config.lane_jump_warn_m_per_frame:
            alerts.append(Alert("lane_departure", "warn", t, {
                "offset_m": offset, "jump_m": jump}))
        new_offset = offset

    if tick.traffic_speed_kmh is not None and \
            speed_kmh < tick.traffic_speed_kmh - config.slow_traffic_margin_kmh:
        alerts.append(Alert("slow_traffic", "info", t, {
            "speed_kmh": speed_kmh, "traffic_kmh": tick.traffic_speed_kmh}))

    failing = {}
    if snap.battery_v is not None and snap.battery_v < config.battery_min_v:
        failing["battery_v"] = snap.battery_v
    if snap.oil_pressure not in (None, 0):
        failing["oil_pressure"] = snap.oil_pressure
    if snap.brake_oil_level not in (None, 0):
        failing["brake_oil_level"] = snap.brake_oil_level
    if failing:
        alerts.append(Alert("maintenance", "warn", t, failing))

    # -- commands (semi-automated only) --------------------------------------
    commands: list[ControlCommand] = []
    if mode == "semi_automated":
        if decelerate:
            commands.append(ControlCommand("decelerate",
                                           config.brake_decel_mps2))
        if takeover:
            commands.append(ControlCommand("takeover", 1.0))

    return alerts, commands, replace(state, prev_offset_m=new_offset)


# ---------------------------------------------------------------------------
# latency measurement

@dataclass(frozen=True)
class LogEvent:
    t: float
    kind: str
    source: str  # "onset" (ground truth) | "alert" (engine output)


def driver_error_latency(events, kind: str) -> float:
    """Seconds from the first ground-truth onset of ``kind`` to the first
    matching alert at or after it; unbounded (inf) when no alert matched."""
    onset = None
    for ev in sorted(events, key=lambda e: e.t):
        if ev.source == "onset" and ev.kind == kind and onset is None:
            onset = ev.t
        elif ev.source == "alert" and ev.kind == kind and onset is not None \
                and ev.t >= onset:
            return ev.t - onset
    return math.inf
