"""Synthetic road rendering: bird's-eye scene composition, projection into
the scenario camera, and exact ground-truth labels.

The scene is authored in bird's-eye space (vehicle at the bottom row, one
lane between a yellow left stripe and a white right stripe, grass shoulders,
optional obstacles), then sampled into the perspective camera through the
scenario homography and distortion model. The renderer does not reuse the
pipeline's warp, so pipeline-vs-renderer comparisons exercise two
independent mappings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import BilinearMap, undistort_points
from ..image import ImageBuffer, quantize
from ..lanes import CLASS_BACKGROUND, CLASS_DRIVABLE, CLASS_LANE_MARKING, LaneFit
from .scenario import Scenario

ASPHALT = (105, 105, 105)
GRASS = (62, 118, 58)
STRIPE_YELLOW = (230, 190, 40)
STRIPE_WHITE = (250, 250, 250)
OBSTACLE = (150, 40, 40)
SKY = (140, 160, 185)

OBSTACLE_DEPTH_M = 4.0


@dataclass(frozen=True)
class RoadTruth:
    """Exact labels emitted alongside every rendered frame."""

    left: LaneFit
    right: LaneFit
    classmap: np.ndarray            # perspective space, camera-sized
    classmap_birdseye: np.ndarray   # bird's-eye space, warp-sized
    lane_center_px: np.ndarray      # per warped row
    offset_m: float


def lane_centerlines(scenario: Scenario, t: float
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact left/right stripe centerline columns per warped row."""
    w, h = scenario.warp_size
    ys = np.arange(h, dtype=np.float64)
    ahead_m = (h - 1 - ys) * scenario.scale.ym_per_px
    center = np.full(h, w / 2.0 - scenario.offset_at(t) / scenario.scale.xm_per_px)
    if scenario.curvature_kind == "arc":
        radius = scenario.arc_radius_m
        shift = radius - np.sqrt(np.maximum(radius ** 2 - ahead_m ** 2, 0.0))
        sign = 1.0 if scenario.arc_direction == "right" else -1.0
        center = center + sign * shift / scenario.scale.xm_per_px
    half = scenario.lane_width_m / 2.0 / scenario.scale.xm_per_px
    return ys, center - half, center + half


def exact_lane_fit(ys: np.ndarray, xs: np.ndarray) -> LaneFit:
    """Ground-truth quadratic through exact centerline samples."""
    a, b, c = np.polyfit(ys, xs, 2)
    return LaneFit(float(a), float(b), float(c), len(ys))


def compose_birdseye(scenario: Scenario, t: float
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(color HxWx3 float, classmap HxW uint8, lane_center per row)."""
    w, h = scenario.warp_size
    ys, left, right = lane_centerlines(scenario, t)
    center = (left + right) / 2.0
    cols = np.arange(w, dtype=np.float64)[None, :]

    on_road = ((cols >= (left - scenario.shoulder_px)[:, None])
               & (cols <= (right + scenario.shoulder_px)[:, None]))
    half_stripe = scenario.stripe_width_px / 2.0
    on_left = np.abs(cols - left[:, None]) <= half_stripe
    on_right = np.abs(cols - right[:, None]) <= half_stripe

    color = np.empty((h, w, 3), dtype=np.float64)
    color[:] = GRASS
    color[on_road] = ASPHALT
    color[on_left] = STRIPE_YELLOW
    color[on_right] = STRIPE_WHITE

    classmap = np.full((h, w), CLASS_BACKGROUND, dtype=np.uint8)
    classmap[on_road] = CLASS_DRIVABLE
    classmap[on_left | on_right] = CLASS_LANE_MARKING

    # Obstacles sit across the lane at their scripted range.
    for track in scenario.obstacles_at(t):
        if track.bearing != "ahead":
            continue
        view_m = h * scenario.scale.ym_per_px
        if track.range_m >= view_m:
            continue
        row_near = h - 1 - int(track.range_m / scenario.scale.ym_per_px)
        row_far = h - 1 - int(min(track.range_m + OBSTACLE_DEPTH_M, view_m - 0.01)
                              / scenario.scale.ym_per_px)
        row_far = max(row_far, 0)
        for row in range(row_far, min(row_near + 1, h)):
            lo = int(np.floor(left[row] + half_stripe + 1))
            hi = int(np.ceil(right[row] - half_stripe - 1))
            if lo < hi:
                color[row, lo:hi] = OBSTACLE
                classmap[row, lo:hi] = CLASS_BACKGROUND
    return color, classmap, center


class RoadRenderer:
    """Per-scenario renderer; caches the static camera-to-birdseye mapping
    so per-frame work is only scene composition plus gathers."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        cam_w, cam_h = scenario.image_size
        xs, ys = np.meshgrid(np.arange(cam_w, dtype=np.float64),
                             np.arange(cam_h, dtype=np.float64))
        grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
        if scenario.camera.has_distortion:
            grid = undistort_points(grid, scenario.camera, max_iter=20)
        bird_pts = scenario.homography.apply(grid)
        bx = bird_pts[:, 0].reshape(cam_h, cam_w)
        by = bird_pts[:, 1].reshape(cam_h, cam_w)
        warp_w, warp_h = scenario.warp_size
        self._sampler = BilinearMap(bx, by, warp_h, warp_w)
        nx = np.floor(bx + 0.5).astype(np.intp)
        ny = np.floor(by + 0.5).astype(np.intp)
        self._nearest_valid = ((nx >= 0) & (nx < warp_w)
                               & (ny >= 0) & (ny < warp_h))
        self._nx = np.clip(nx, 0, warp_w - 1)
        self._ny = np.clip(ny, 0, warp_h - 1)
        self._cam_shape = (cam_h, cam_w)

    def render(self, t: float) -> tuple[ImageBuffer, RoadTruth]:
        scenario = self.scenario
        if not 0.0 <= t <= scenario.duration_s:
            raise ValueError(f"t={t} outside scenario duration "
                             f"{scenario.duration_s}")
        bird_color, bird_class, center = compose_birdseye(scenario, t)
        planes = [self._sampler.sample(bird_color[:, :, c], SKY[c])
                  for c in range(3)]
        image = ImageBuffer(quantize(np.stack(planes, axis=-1)))

        classmap = np.full(self._cam_shape, CLASS_BACKGROUND, dtype=np.uint8)
        gathered = bird_class[self._ny, self._nx]
        classmap[self._nearest_valid] = gathered[self._nearest_valid]

        ys_rows, left, right = lane_centerlines(scenario, t)
        truth = RoadTruth(
            left=exact_lane_fit(ys_rows, left),
            right=exact_lane_fit(ys_rows, right),
            classmap=classmap,
            classmap_birdseye=bird_class,
            lane_center_px=center,
            offset_m=scenario.offset_at(t),
        )
        return image, truth


def render_road_frame(scenario: Scenario, t: float
                      ) -> tuple[ImageBuffer, RoadTruth]:
    """Camera frame plus exact ground truth for time ``t``."""
    return RoadRenderer(scenario).render(t)
