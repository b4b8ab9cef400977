"""Lane pipeline: candidate masks, sliding-window search, quadratic fits,
curvature/offset, frame-to-frame tracking with sanity rejection, free space.

Lane lines are modeled as x = a*y^2 + b*y + c in bird's-eye (warped) pixel
space, y growing downward, vehicle at the bottom row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from .image import ImageBuffer, ImageError, rgb_to_hls
from .segnet import CLASS_BACKGROUND, CLASS_DRIVABLE, CLASS_LANE_MARKING  # noqa: F401


class LaneError(ValueError):
    pass


@dataclass(frozen=True)
class MetricScale:
    """Meters per warped pixel; defaults match the synthetic road model."""

    xm_per_px: float = 3.7 / 700.0
    ym_per_px: float = 30.0 / 720.0


@dataclass(frozen=True)
class LaneConfig:
    # color_mask windows (HLS, H in [0,180), L/S in [0,255])
    white_l_min: float = 200.0
    white_s_max: float = 60.0
    yellow_h_range: tuple[float, float] = (15.0, 35.0)
    yellow_s_min: float = 80.0
    yellow_l_range: tuple[float, float] = (80.0, 220.0)
    # gradient_mask thresholds on the scaled |d/dx| response
    grad_l_range: tuple[float, float] = (20.0, 255.0)
    grad_s_range: tuple[float, float] = (25.0, 255.0)
    # candidate merging: "vote" (2-of-3) or "or"
    merge_rule: str = "vote"
    # sliding-window search
    n_windows: int = 9
    margin: int = 80
    min_recenter: int = 50
    histogram_floor: int = 1
    # fits and tracking
    min_support: int = 200
    track_margin: int = 80
    history: int = 5
    n_reset: int = 5
    # sanity thresholds (metric)
    width_range_m: tuple[float, float] = (2.5, 4.6)
    width_variation_max: float = 0.35
    curvature_agreement: float = 4.0
    straight_cap_m: float = 10000.0


class LanePixels(NamedTuple):
    xs: np.ndarray
    ys: np.ndarray

    @property
    def count(self) -> int:
        return int(self.xs.size)


@dataclass(frozen=True)
class LaneFit:
    """Quadratic x(y) = a*y^2 + b*y + c plus its supporting pixel count."""

    a: float
    b: float
    c: float
    n_pixels: int

    def x_at(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        return self.a * y * y + self.b * y + self.c


@dataclass(frozen=True)
class LaneEstimate:
    left: Optional[LaneFit]
    right: Optional[LaneFit]
    curvature_radius_m: float
    lateral_offset_m: float
    lane_width_m: float
    confidence: float
    frame_index: int

    @property
    def locked(self) -> bool:
        return self.left is not None and self.right is not None


@dataclass(frozen=True)
class SanityResult:
    accepted: bool
    reason: str = ""  # "", "width", "parallel", "curvature"


@dataclass(frozen=True)
class FreeSpace:
    """Contiguous drivable extents per row, scanned upward from the vehicle.

    ``blocked`` is True when the scan stopped at a non-drivable row before
    reaching the top of the map (i.e. something actually obstructs the run,
    as opposed to the view simply ending).
    """

    extents: tuple[tuple[int, int, int], ...]  # (row, left_col, right_col)
    area_fraction: float
    blocked: bool = False

    @property
    def clear_rows(self) -> int:
        return len(self.extents)


@dataclass
class TrackerState:
    last_accepted: Optional[LaneEstimate] = None
    consecutive_rejects: int = 0
    history: list[tuple[LaneFit, LaneFit]] = field(default_factory=list)
    frame_index: int = -1
    last_mode: str = "search"  # "search" | "track"
    last_reject_reason: str = ""


# ---------------------------------------------------------------------------
# candidate masks

def _color_mask_hls(h, l, s, cfg: LaneConfig) -> np.ndarray:
    white = (l >= cfg.white_l_min) & (s <= cfg.white_s_max)
    yellow = (
        (h >= cfg.yellow_h_range[0]) & (h <= cfg.yellow_h_range[1])
        & (s >= cfg.yellow_s_min)
        & (l >= cfg.yellow_l_range[0]) & (l <= cfg.yellow_l_range[1])
    )
    return white | yellow


def color_mask(img: ImageBuffer, cfg: LaneConfig = LaneConfig()) -> np.ndarray:
    """Bits set where HLS falls inside the white or the yellow window."""
    if img.channels != 3:
        raise ImageError("color_mask requires a 3-channel image")
    h, l, s = rgb_to_hls(img)
    return _color_mask_hls(h, l, s, cfg)


_DERIV_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _horizontal_derivative(plane: np.ndarray) -> np.ndarray:
    """3x3 horizontal-derivative magnitude, scaled to [0, 255].

    Edge rows/cols use replicated borders; the raw response is divided by 4
    (its maximum over [0,255] data) so thresholds live on a fixed scale.
    """
    padded = np.pad(plane, 1, mode="edge")
    out = np.zeros_like(plane, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            k = _DERIV_X[dy, dx]
            if k != 0.0:
                out += k * padded[dy:dy + plane.shape[0], dx:dx + plane.shape[1]]
    return np.abs(out) / 4.0


def _gradient_mask_hls(l, s, cfg: LaneConfig) -> np.ndarray:
    gl = _horizontal_derivative(l)
    gs = _horizontal_derivative(s)
    on_l = (gl >= cfg.grad_l_range[0]) & (gl <= cfg.grad_l_range[1])
    on_s = (gs >= cfg.grad_s_range[0]) & (gs <= cfg.grad_s_range[1])
    return on_l | on_s


def gradient_mask(img: ImageBuffer, cfg: LaneConfig = LaneConfig()) -> np.ndarray:
    """Bits set where the L- or S-channel horizontal gradient is in range."""
    if img.channels != 3:
        raise ImageError("gradient_mask requires a 3-channel image")
    _, l, s = rgb_to_hls(img)
    return _gradient_mask_hls(l, s, cfg)


def candidate_masks(img: ImageBuffer, cfg: LaneConfig = LaneConfig()
                    ) -> tuple[np.ndarray, np.ndarray]:
    """(color_mask, gradient_mask) sharing a single HLS conversion."""
    if img.channels != 3:
        raise ImageError("candidate_masks requires a 3-channel image")
    h, l, s = rgb_to_hls(img)
    return _color_mask_hls(h, l, s, cfg), _gradient_mask_hls(l, s, cfg)


def merge_candidates(color: np.ndarray, grad: np.ndarray, seg: np.ndarray,
                     rule: str = "vote") -> np.ndarray:
    """Combine the three candidate masks: 2-of-3 vote (default) or OR."""
    if color.shape != grad.shape or color.shape != seg.shape:
        raise LaneError(
            f"mask dimensions differ: {color.shape}, {grad.shape}, {seg.shape}"
        )
    if rule == "or":
        return color | grad | seg
    if rule == "vote":
        votes = color.astype(np.uint8) + grad.astype(np.uint8) + seg.astype(np.uint8)
        return votes >= 2
    raise LaneError(f"unknown merge rule {rule!r}")


# ---------------------------------------------------------------------------
# search and fitting

def sliding_window_search(
    warped: np.ndarray,
    n_windows: int = 9,
    margin: int = 80,
    min_recenter: int = 50,
    histogram_floor: int = 1,
) -> tuple[LanePixels, LanePixels]:
    """Collect left/right lane pixels with the stacked-window histogram search.

    Base columns come from the two peaks of the bottom-half column histogram,
    one on each side of the image center; a side whose peak is below
    ``histogram_floor`` yields an empty pixel set. An upward sweep re-centers
    window by window; a downward refinement sweep then recovers bottom
    windows the upward sweep missed when the base column sits far from the
    line's bottom-row position (strongly curved lines).
    """
    h, w = warped.shape
    histogram = warped[h // 2:, :].sum(axis=0)
    midpoint = w // 2
    ys, xs = np.nonzero(warped)

    def sweep(start: int, bands: range) -> tuple[set, int]:
        current = start
        window_height = h // n_windows
        picked: set = set()
        for win in bands:
            y_hi = h - win * window_height
            y_lo = h - (win + 1) * window_height
            inside = (
                (ys >= y_lo) & (ys < y_hi)
                & (xs >= current - margin) & (xs < current + margin)
            )
            idx = np.nonzero(inside)[0]
            picked.update(idx.tolist())
            if idx.size >= min_recenter:
                current = int(np.mean(xs[idx]))
        return picked, current

    def collect(base: Optional[int]) -> LanePixels:
        if base is None:
            return LanePixels(np.empty(0, dtype=int), np.empty(0, dtype=int))
        up, top_center = sweep(base, range(n_windows))
        down, _ = sweep(top_center, range(n_windows - 1, -1, -1))
        sel = np.fromiter(up | down, dtype=int, count=len(up | down))
        return LanePixels(xs[sel], ys[sel])

    left_base = int(np.argmax(histogram[:midpoint]))
    if histogram[left_base] < histogram_floor:
        left_base = None
    right_base = int(np.argmax(histogram[midpoint:])) + midpoint
    if histogram[right_base] < histogram_floor:
        right_base = None
    return collect(left_base), collect(right_base)


def fit_lane(pixels: LanePixels) -> LaneFit:
    """Least-squares quadratic minimizing the horizontal residual.

    Pixels are sorted into a canonical (y, x) order first so the same pixel
    set always yields bit-identical coefficients regardless of how it was
    collected.
    """
    if pixels.count < 3 or np.unique(pixels.ys).size < 3:
        raise LaneError(
            f"under-determined lane fit: {pixels.count} pixels, "
            f"{np.unique(pixels.ys).size} distinct rows"
        )
    order = np.lexsort((pixels.xs, pixels.ys))
    a, b, c = np.polyfit(pixels.ys[order].astype(np.float64),
                         pixels.xs[order].astype(np.float64), 2)
    return LaneFit(float(a), float(b), float(c), pixels.count)


def _metric_radius(fit: LaneFit, scale: MetricScale, eval_row: float,
                   cap: float) -> float:
    sx, sy = scale.xm_per_px, scale.ym_per_px
    am = fit.a * sx / (sy * sy)
    bm = fit.b * sx / sy
    if abs(am) < 1e-12:
        return cap
    ym = eval_row * sy
    radius = (1.0 + (2.0 * am * ym + bm) ** 2) ** 1.5 / abs(2.0 * am)
    return min(radius, cap)


def curvature_and_offset(
    left: LaneFit,
    right: LaneFit,
    scale: MetricScale,
    eval_row: int,
    image_width: int,
    cap: float = 10000.0,
) -> tuple[float, float, float]:
    """Mean curvature radius, lateral offset, and lane width at eval_row.

    Offset is positive when the vehicle (image center) sits right of the
    lane center.
    """
    radius = min(
        0.5 * (_metric_radius(left, scale, eval_row, cap)
               + _metric_radius(right, scale, eval_row, cap)),
        cap,
    )
    xl = float(left.x_at(eval_row))
    xr = float(right.x_at(eval_row))
    lane_center = 0.5 * (xl + xr)
    offset = (image_width / 2.0 - lane_center) * scale.xm_per_px
    width = (xr - xl) * scale.xm_per_px
    return radius, offset, width


def sanity_check(left: LaneFit, right: LaneFit, scale: MetricScale,
                 image_height: int, cfg: LaneConfig = LaneConfig()) -> SanityResult:
    """Accept a fit pair only if it still looks like one lane.

    Checks, in order: plausible bottom width and no crossing, bounded
    top-vs-bottom width variation, curvature agreement between the lines.
    """
    bottom = image_height - 1
    w_bottom = (float(right.x_at(bottom)) - float(left.x_at(bottom))) * scale.xm_per_px
    w_top = (float(right.x_at(0)) - float(left.x_at(0))) * scale.xm_per_px
    lo, hi = cfg.width_range_m
    if w_bottom < lo or w_bottom > hi or w_top <= 0.0:
        return SanityResult(False, "width")
    if abs(w_top - w_bottom) / w_bottom > cfg.width_variation_max:
        return SanityResult(False, "parallel")
    rl = _metric_radius(left, scale, bottom, cfg.straight_cap_m)
    rr = _metric_radius(right, scale, bottom, cfg.straight_cap_m)
    if rl < cfg.straight_cap_m and rr < cfg.straight_cap_m:
        if max(rl, rr) / min(rl, rr) > cfg.curvature_agreement:
            return SanityResult(False, "curvature")
    return SanityResult(True)


# ---------------------------------------------------------------------------
# tracking

def _pixels_near_fit(warped: np.ndarray, fit: LaneFit, margin: int) -> LanePixels:
    ys, xs = np.nonzero(warped)
    center = fit.x_at(ys)
    inside = (xs >= center - margin) & (xs < center + margin)
    return LanePixels(xs[inside], ys[inside])


def _mean_fit(fits: list[LaneFit]) -> LaneFit:
    return LaneFit(
        float(np.mean([f.a for f in fits])),
        float(np.mean([f.b for f in fits])),
        float(np.mean([f.c for f in fits])),
        fits[-1].n_pixels,
    )


def _empty_estimate(frame_index: int, cap: float) -> LaneEstimate:
    return LaneEstimate(None, None, cap, 0.0, 0.0, 0.0, frame_index)


def track_lanes(
    state: TrackerState,
    warped: np.ndarray,
    scale: MetricScale = MetricScale(),
    cfg: LaneConfig = LaneConfig(),
) -> tuple[LaneEstimate, TrackerState]:
    """Advance the tracker by one frame and return the current estimate.

    With a prior lock, candidates are restricted to a margin around the
    previous polynomials; otherwise (first frame, or after ``n_reset``
    consecutive rejects) the full sliding-window search runs. Accepted fits
    are pushed into the smoothing ring and the ring mean is reported;
    rejected frames reuse the prior estimate. Never raises: a frame with no
    usable lanes degrades to an unlocked, zero-confidence estimate.
    """
    h, w = warped.shape
    frame_index = state.frame_index + 1
    prior = state.last_accepted
    use_track = prior is not None and prior.locked and \
        state.consecutive_rejects < cfg.n_reset
    mode = "track" if use_track else "search"

    if use_track:
        left_px = _pixels_near_fit(warped, prior.left, cfg.track_margin)
        right_px = _pixels_near_fit(warped, prior.right, cfg.track_margin)
    else:
        left_px, right_px = sliding_window_search(
            warped, cfg.n_windows, cfg.margin, cfg.min_recenter,
            cfg.histogram_floor)

    fits = []
    for px in (left_px, right_px):
        if px.count < max(3, cfg.min_support):
            fits.append(None)
            continue
        try:
            fits.append(fit_lane(px))
        except LaneError:
            fits.append(None)
    left_fit, right_fit = fits

    reason = ""
    if left_fit is not None and right_fit is not None:
        check = sanity_check(left_fit, right_fit, scale, h, cfg)
        accepted = check.accepted
        reason = check.reason
    else:
        accepted = False
        reason = "support"

    if accepted:
        history = [] if mode == "search" else list(state.history)
        history.append((left_fit, right_fit))
        history = history[-cfg.history:]
        smooth_left = _mean_fit([p[0] for p in history])
        smooth_right = _mean_fit([p[1] for p in history])
        radius, offset, width = curvature_and_offset(
            smooth_left, smooth_right, scale, h - 1, w, cfg.straight_cap_m)
        confidence = min(1.0, (left_fit.n_pixels + right_fit.n_pixels)
                         / (4.0 * cfg.min_support))
        estimate = LaneEstimate(smooth_left, smooth_right, radius, offset,
                                width, confidence, frame_index)
        new_state = TrackerState(
            last_accepted=estimate,
            consecutive_rejects=0,
            history=history,
            frame_index=frame_index,
            last_mode=mode,
        )
        return estimate, new_state

    rejects = state.consecutive_rejects + 1
    if prior is not None:
        estimate = replace(prior, confidence=prior.confidence * 0.5,
                           frame_index=frame_index)
    else:
        estimate = _empty_estimate(frame_index, cfg.straight_cap_m)
    new_state = TrackerState(
        last_accepted=prior,
        consecutive_rejects=rejects,
        history=list(state.history),
        frame_index=frame_index,
        last_mode=mode,
        last_reject_reason=reason,
    )
    return estimate, new_state


# ---------------------------------------------------------------------------
# free space

def free_space(seg: np.ndarray, vehicle_row: int,
               center_col: Optional[int] = None,
               drivable_class: int = CLASS_DRIVABLE) -> FreeSpace:
    """Drivable extents around the lane-center column, scanned upward.

    Scanning stops at the first row whose center column is not drivable, so
    ``clear_rows`` measures the unobstructed run ahead of the vehicle.
    """
    h, w = seg.shape
    if not 0 <= vehicle_row < h:
        raise LaneError(f"vehicle_row {vehicle_row} outside map of height {h}")
    col = w // 2 if center_col is None else center_col
    drivable = seg == drivable_class

    # Rows clear at the center column, bottom-up until the first blocker.
    center_up = drivable[vehicle_row::-1, col]
    blockers = np.nonzero(~center_up)[0]
    blocked = blockers.size > 0
    n_clear = int(blockers[0]) if blocked else vehicle_row + 1

    extents = []
    drivable_px = 0
    if n_clear:
        rows = vehicle_row - np.arange(n_clear)
        blocked_cells = ~drivable[rows]
        # Left boundary: nearest non-drivable cell at or left of the center.
        left_block = blocked_cells[:, col::-1]
        has_lb = left_block.any(axis=1)
        lefts = np.where(has_lb, col - np.argmax(left_block, axis=1) + 1, 0)
        right_block = blocked_cells[:, col:]
        has_rb = right_block.any(axis=1)
        rights = np.where(has_rb, col + np.argmax(right_block, axis=1) - 1,
                          w - 1)
        extents = list(zip(rows.tolist(), lefts.tolist(), rights.tolist()))
        drivable_px = int(np.sum(rights - lefts + 1))
    total = (vehicle_row + 1) * w
    return FreeSpace(tuple(extents), drivable_px / total if total else 0.0,
                     blocked)
