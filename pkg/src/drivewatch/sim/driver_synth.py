"""Synthetic driver-camera observations: landmark projection from the rigid
face model at the scripted pose, scripted eye closure, body keypoints, and
the landmark/keypoint CSV interchange format."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..driver import BodyKeypoints
from ..headpose import (
    LEFT_EYE,
    RIGHT_EYE,
    HeadPose,
    LandmarkSet,
    load_face_model,
    project_points,
)
from .scenario import Scenario

_FACE_MODEL_CACHE: dict[int, np.ndarray] = {}


def _face_model() -> np.ndarray:
    model = _FACE_MODEL_CACHE.get(0)
    if model is None:
        model = load_face_model()
        _FACE_MODEL_CACHE[0] = model
    return model


def _frame_rng(seed: int, frame_index: int) -> np.random.RandomState:
    return np.random.RandomState((seed * 1_000_003 + frame_index) % 2**32)


def _collapse_eyes(points: np.ndarray, amount: float = 1.0) -> np.ndarray:
    """Move the lid landmarks toward each other; amount 1.0 closes the eye."""
    out = points.copy()
    for eye in (LEFT_EYE, RIGHT_EYE):
        idx = [i - 1 for i in eye]
        p2, p3, p5, p6 = idx[1], idx[2], idx[4], idx[5]
        for upper, lower in ((p2, p6), (p3, p5)):
            mid = (out[upper] + out[lower]) / 2.0
            out[upper] = out[upper] * (1 - amount) + mid * amount
            out[lower] = out[lower] * (1 - amount) + mid * amount
    return out


def synth_driver_frame(scenario: Scenario, t: float, frame_index: int = 0
                       ) -> tuple[LandmarkSet, BodyKeypoints, HeadPose]:
    """Landmarks, body keypoints, and the true pose for time ``t``."""
    if not 0.0 <= t <= scenario.duration_s:
        raise ValueError(f"t={t} outside scenario duration "
                         f"{scenario.duration_s}")
    script = scenario.driver_state_at(t)
    cam = scenario.driver_camera
    translation = np.array([0.0, 0.0, scenario.driver_distance])
    pts = project_points(_face_model(), script.yaw, script.pitch,
                         script.roll, translation, cam)
    if script.eyes_closed:
        pts = _collapse_eyes(pts)
    if scenario.driver_noise_px > 0:
        rng = _frame_rng(scenario.seed, frame_index)
        pts = pts + rng.uniform(-scenario.driver_noise_px,
                                scenario.driver_noise_px, pts.shape)
    landmarks = LandmarkSet.from_points(pts, confidence=0.95)

    wheel = scenario.wheel_ellipse
    if script.hands_on:
        left = (wheel.cx - 0.5 * wheel.rx, wheel.cy, 0.9)
        right = (wheel.cx + 0.5 * wheel.rx, wheel.cy, 0.9)
    else:
        left = (wheel.cx - 0.4 * wheel.rx, wheel.cy + 2.5 * wheel.ry, 0.9)
        right = (wheel.cx + 0.4 * wheel.rx, wheel.cy + 2.5 * wheel.ry, 0.9)
    keypoints = BodyKeypoints({
        "head": (cam.cx, cam.cy - 40.0, 0.9),
        "left_shoulder": (cam.cx - 55.0, cam.cy + 45.0, 0.9),
        "right_shoulder": (cam.cx + 55.0, cam.cy + 45.0, 0.9),
        "left_elbow": (wheel.cx - 0.9 * wheel.rx, wheel.cy + wheel.ry, 0.8),
        "right_elbow": (wheel.cx + 0.9 * wheel.rx, wheel.cy + wheel.ry, 0.8),
        "left_wrist": left,
        "right_wrist": right,
    })
    truth = HeadPose(script.yaw, script.pitch, script.roll, translation, 0.0)
    return landmarks, keypoints, truth


# ---------------------------------------------------------------------------
# landmark/keypoint CSV interchange
#
# One row per point: frame_index, point_name_or_index, x, y, confidence.
# Landmarks use their 1-based index; body keypoints use their name.

@dataclass(frozen=True)
class DriverFrameRecord:
    frame_index: int
    landmarks: LandmarkSet
    keypoints: BodyKeypoints


def write_driver_frames_csv(path, records: list[DriverFrameRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_index", "point", "x", "y", "confidence"])
        for rec in records:
            for i, (x, y) in enumerate(rec.landmarks.points, start=1):
                writer.writerow([rec.frame_index, i, f"{x:.6f}", f"{y:.6f}",
                                 f"{rec.landmarks.confidence[i - 1]:.3f}"])
            for name, (x, y, c) in sorted(rec.keypoints.points.items()):
                writer.writerow([rec.frame_index, name, f"{x:.6f}",
                                 f"{y:.6f}", f"{c:.3f}"])


def read_driver_frames_csv(path) -> list[DriverFrameRecord]:
    frames: dict[int, tuple[dict, dict]] = {}
    with open(path, "r", newline="") as fh:
        for row in csv.DictReader(fh):
            idx = int(row["frame_index"])
            lm, kp = frames.setdefault(idx, ({}, {}))
            point = row["point"]
            x, y, c = float(row["x"]), float(row["y"]), float(row["confidence"])
            if point.isdigit():
                lm[int(point)] = (x, y, c)
            else:
                kp[point] = (x, y, c)
    records = []
    for idx in sorted(frames):
        lm, kp = frames[idx]
        if sorted(lm) != list(range(1, 69)):
            raise ValueError(f"frame {idx}: expected landmark indices 1..68")
        pts = np.array([[lm[i][0], lm[i][1]] for i in range(1, 69)])
        conf = np.array([lm[i][2] for i in range(1, 69)])
        records.append(DriverFrameRecord(
            idx, LandmarkSet(pts, conf), BodyKeypoints(kp)))
    return records
