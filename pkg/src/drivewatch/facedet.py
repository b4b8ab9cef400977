"""Histogram-of-oriented-gradients features and a linear sliding-window
face detector with greedy non-maximum suppression.

The detector consumes a pre-supplied linear scorer (weights + bias); no
training happens here. Gradients at the outermost pixel ring are defined as
zero so every feature is a pure function of the window contents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .image import ImageBuffer, resize_bilinear


class FeatureError(ValueError):
    pass


def _gradients(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.zeros_like(plane, dtype=np.float64)
    gy = np.zeros_like(plane, dtype=np.float64)
    gx[:, 1:-1] = plane[:, 2:] - plane[:, :-2]
    gy[1:-1, :] = plane[2:, :] - plane[:-2, :]
    return gx, gy


def cell_histograms(plane: np.ndarray, cell: int = 8,
                    bins: int = 9) -> np.ndarray:
    """Magnitude-weighted unsigned orientation histograms per cell.

    Returns (cells_y, cells_x, bins); the plane is truncated to whole cells.
    """
    h, w = plane.shape
    cy, cx = h // cell, w // cell
    if cy == 0 or cx == 0:
        raise FeatureError(f"plane {plane.shape} smaller than one {cell}px cell")
    plane = np.asarray(plane[: cy * cell, : cx * cell], dtype=np.float64)
    gx, gy = _gradients(plane)
    mag = np.hypot(gx, gy)
    theta = np.degrees(np.arctan2(gy, gx)) % 180.0
    bin_idx = np.minimum((theta / (180.0 / bins)).astype(int), bins - 1)

    hist = np.zeros((cy, cx, bins))
    cell_y = np.arange(cy * cell) // cell
    cell_x = np.arange(cx * cell) // cell
    flat_cell = (cell_y[:, None] * cx + cell_x[None, :]).ravel()
    np.add.at(hist.reshape(cy * cx, bins),
              (flat_cell, bin_idx.ravel()), mag.ravel())
    return hist


def _normalized_blocks(hist: np.ndarray) -> np.ndarray:
    """Concatenate L2-normalized 2x2-cell blocks (stride one cell).

    All-zero blocks stay zero instead of dividing by the norm guard.
    """
    cy, cx, bins = hist.shape
    if cy < 2 or cx < 2:
        raise FeatureError("window smaller than one 2x2-cell block")
    blocks = []
    for by in range(cy - 1):
        for bx in range(cx - 1):
            vec = hist[by:by + 2, bx:bx + 2, :].ravel()
            norm = np.sqrt(np.sum(vec * vec))
            blocks.append(vec / norm if norm > 1e-12 else vec)
    return np.concatenate(blocks)


def hog_features(img, cell: int = 8, bins: int = 9) -> np.ndarray:
    """Block-normalized HOG descriptor with a deterministic layout.

    ``img`` is an ImageBuffer (converted to luminance) or a 2-d plane whose
    sides must be multiples of the cell size.
    """
    plane = img.gray() if isinstance(img, ImageBuffer) else np.asarray(img, dtype=np.float64)
    h, w = plane.shape
    if h % cell or w % cell:
        raise FeatureError(f"window {w}x{h} is not a multiple of cell {cell}")
    return _normalized_blocks(cell_histograms(plane, cell, bins))


@dataclass(frozen=True)
class LinearScorer:
    """Dot-product window scorer: score = weights . features + bias."""

    weights: np.ndarray
    bias: float
    window_w: int
    window_h: int
    threshold: float
    cell: int = 8
    bins: int = 9


def scorer_from_template(template: ImageBuffer, threshold_frac: float = 0.6,
                         cell: int = 8, bins: int = 9) -> LinearScorer:
    """Matched-filter scorer built from a single template window."""
    feat = hog_features(template, cell, bins)
    norm = np.linalg.norm(feat)
    if norm < 1e-12:
        raise FeatureError("template has no gradient energy")
    weights = feat / norm
    self_score = float(weights @ feat)
    return LinearScorer(weights, 0.0, template.width, template.height,
                        threshold_frac * self_score, cell, bins)


@dataclass(frozen=True)
class Detection:
    x: float
    y: float
    w: float
    h: float
    score: float

    def iou(self, other: "Detection") -> float:
        x1 = max(self.x, other.x)
        y1 = max(self.y, other.y)
        x2 = min(self.x + self.w, other.x + other.w)
        y2 = min(self.y + self.h, other.y + other.h)
        inter = max(0.0, x2 - x1) * max(0.0, y2 - y1)
        union = self.w * self.h + other.w * other.h - inter
        return inter / union if union > 0 else 0.0


def non_max_suppression(dets: list[Detection],
                        iou_max: float = 0.3) -> list[Detection]:
    """Greedy NMS: keep highest scores, drop overlaps above iou_max."""
    kept: list[Detection] = []
    for det in sorted(dets, key=lambda d: -d.score):
        if all(det.iou(k) <= iou_max for k in kept):
            kept.append(det)
    return kept


def detect_faces(img: ImageBuffer, scorer: LinearScorer, stride: int = 8,
                 scales: int = 5, scale_step: float = 1.25,
                 iou_max: float = 0.3) -> list[Detection]:
    """Sliding-window detection over an image pyramid.

    The plane is repeatedly downscaled by ``scale_step``; windows whose score
    clears the scorer threshold survive greedy NMS. Boxes are reported in
    original image coordinates. An empty list is a valid outcome.
    """
    plane = img.gray()
    ww, wh = scorer.window_w, scorer.window_h
    cell, bins = scorer.cell, scorer.bins
    cells_x, cells_y = ww // cell, wh // cell
    candidates: list[Detection] = []
    for level in range(scales):
        factor = scale_step ** level
        sh = int(round(img.height / factor))
        sw = int(round(img.width / factor))
        if sh < wh or sw < ww:
            break
        scaled = plane if level == 0 else resize_bilinear(plane, sh, sw)
        grid = cell_histograms(scaled, cell, bins)
        gy, gx, _ = grid.shape
        step = max(1, stride // cell)
        for cy0 in range(0, gy - cells_y + 1, step):
            for cx0 in range(0, gx - cells_x + 1, step):
                feat = _normalized_blocks(
                    grid[cy0:cy0 + cells_y, cx0:cx0 + cells_x, :])
                score = float(scorer.weights @ feat) + scorer.bias
                if score >= scorer.threshold:
                    candidates.append(Detection(
                        cx0 * cell * factor, cy0 * cell * factor,
                        ww * factor, wh * factor, score))
    return non_max_suppression(candidates, iou_max)


def largest_detection(dets: list[Detection]) -> Detection | None:
    """Multi-face policy: the largest box wins."""
    return max(dets, key=lambda d: d.w * d.h, default=None)
