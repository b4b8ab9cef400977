"""Driver-state monitoring: gaze regions from head pose, eye closure and
blink statistics, drowsiness/distraction flags, hands-on-wheel.

All timing rules run on the simulated clock handed in by the caller; the
monitor only ever looks at current and past frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .headpose import HeadPose

GAZE_REGIONS = ("road", "left", "right", "instrument_cluster",
                "center_stack", "rearview", "down")


class DriverError(ValueError):
    pass


@dataclass(frozen=True)
class GazeSector:
    region: str
    yaw_range: tuple[float, float]
    pitch_range: tuple[float, float]

    def contains(self, yaw: float, pitch: float) -> bool:
        return (self.yaw_range[0] <= yaw <= self.yaw_range[1]
                and self.pitch_range[0] <= pitch <= self.pitch_range[1])


@dataclass(frozen=True)
class GazeConfig:
    """Angular gates; the named sector table is checked in order after the
    road gate, then left/right/down fallbacks, then road as the default
    (drivers face forward most of the time, so ties resolve there)."""

    road_yaw: float = 15.0
    road_pitch: float = 12.0
    down_pitch: float = -12.0
    sectors: tuple[GazeSector, ...] = (
        GazeSector("rearview", (15.0, 60.0), (12.0, 40.0)),
        GazeSector("instrument_cluster", (-15.0, 15.0), (-25.0, -12.0)),
        GazeSector("center_stack", (15.0, 60.0), (-45.0, -12.0)),
    )


def classify_gaze(pose: HeadPose, cfg: GazeConfig = GazeConfig()) -> str:
    yaw, pitch = pose.yaw, pose.pitch
    if abs(yaw) <= cfg.road_yaw and abs(pitch) <= cfg.road_pitch:
        return "road"
    for sector in cfg.sectors:
        if sector.contains(yaw, pitch):
            return sector.region
    if yaw < -cfg.road_yaw:
        return "left"
    if yaw > cfg.road_yaw:
        return "right"
    if pitch < cfg.down_pitch:
        return "down"
    return "road"


# ---------------------------------------------------------------------------
# eyes

def eye_aspect_ratio(eye: np.ndarray) -> float:
    """(|p2-p6| + |p3-p5|) / (2 |p1-p4|) over the canonical 6-point eye.

    Similarity-invariant; approaches 0 as the eye closes. Raises when the
    horizontal extent collapses (p1 == p4).
    """
    eye = np.asarray(eye, dtype=np.float64)
    if eye.shape != (6, 2):
        raise DriverError(f"expected 6 eye points, got {eye.shape}")
    horizontal = np.linalg.norm(eye[0] - eye[3])
    if horizontal < 1e-12:
        raise DriverError("zero horizontal eye extent (p1 == p4)")
    v1 = np.linalg.norm(eye[1] - eye[5])
    v2 = np.linalg.norm(eye[2] - eye[4])
    return float((v1 + v2) / (2.0 * horizontal))


@dataclass(frozen=True)
class EyeState:
    ear_left: float
    ear_right: float
    closed: bool

    @property
    def ear_mean(self) -> float:
        return 0.5 * (self.ear_left + self.ear_right)


# ---------------------------------------------------------------------------
# hands

@dataclass(frozen=True)
class WheelEllipse:
    cx: float
    cy: float
    rx: float
    ry: float

    def contains(self, x: float, y: float) -> bool:
        # Closed region: the boundary counts as on-wheel.
        return (((x - self.cx) / self.rx) ** 2
                + ((y - self.cy) / self.ry) ** 2) <= 1.0 + 1e-12


@dataclass(frozen=True)
class BodyKeypoints:
    """Named body-foot keypoints: name -> (x, y, confidence).

    Only the wrists are required for the hands check; everything else is
    optional context.
    """

    points: dict[str, tuple[float, float, float]]

    def wrists(self):
        return [self.points[k] for k in ("left_wrist", "right_wrist")
                if k in self.points]


@dataclass(frozen=True)
class HandsCheck:
    on_wheel: bool
    confident: bool


def hands_on_wheel(kp: BodyKeypoints, wheel: WheelEllipse,
                   min_confidence: float = 0.3) -> HandsCheck:
    """True iff a confidently-seen wrist lies inside (or on) the wheel
    ellipse; with no confident wrist the result is a low-confidence False."""
    confident = [(x, y) for x, y, c in kp.wrists() if c >= min_confidence]
    if not confident:
        return HandsCheck(False, False)
    return HandsCheck(any(wheel.contains(x, y) for x, y in confident), True)


# ---------------------------------------------------------------------------
# rolling driver state

@dataclass(frozen=True)
class DriverState:
    pose: Optional[HeadPose]
    gaze: str
    eye: EyeState
    drowsy: bool
    distracted: bool
    hands_on_wheel: bool
    t: float


@dataclass(frozen=True)
class DriverConfig:
    ear_threshold: float = 0.2
    drowsy_window_s: float = 30.0
    drowsy_closed_fraction: float = 0.4
    drowsy_closure_s: float = 1.2
    distraction_s: float = 1.5
    distraction_min_speed_kmh: float = 10.0


@dataclass
class DriverMonitor:
    """Owns the per-scenario closure/gaze history; advance with update().

    Causal by construction: flags depend only on samples at or before the
    current clock value, which must be non-decreasing.
    """

    cfg: DriverConfig = field(default_factory=DriverConfig)
    _last_t: float = float("-inf")
    _closed_samples: list[tuple[float, bool]] = field(default_factory=list)
    _closure_start: Optional[float] = None
    _offroad_start: Optional[float] = None

    def update(self, t: float, ear_left: float, ear_right: float, gaze: str,
               pose: Optional[HeadPose], hands: HandsCheck,
               speed_kmh: float) -> DriverState:
        if t < self._last_t:
            raise DriverError(f"clock went backward: {t} < {self._last_t}")
        self._last_t = t
        cfg = self.cfg

        eye = EyeState(ear_left, ear_right,
                       0.5 * (ear_left + ear_right) < cfg.ear_threshold)

        self._closed_samples.append((t, eye.closed))
        horizon = t - cfg.drowsy_window_s
        while self._closed_samples and self._closed_samples[0][0] < horizon:
            self._closed_samples.pop(0)
        n_closed = sum(1 for _, c in self._closed_samples if c)
        closed_fraction = n_closed / len(self._closed_samples)

        if eye.closed:
            if self._closure_start is None:
                self._closure_start = t
        else:
            self._closure_start = None
        long_closure = (self._closure_start is not None
                        and t - self._closure_start >= cfg.drowsy_closure_s)
        drowsy = closed_fraction >= cfg.drowsy_closed_fraction or long_closure

        if gaze != "road":
            if self._offroad_start is None:
                self._offroad_start = t
        else:
            self._offroad_start = None
        distracted = (self._offroad_start is not None
                      and t - self._offroad_start >= cfg.distraction_s
                      and speed_kmh > cfg.distraction_min_speed_kmh)

        return DriverState(pose, gaze, eye, drowsy, distracted,
                           hands.on_wheel, t)
