"""Facial landmarks, the rigid 3D reference face, and the geometric head
pose solver (damped iterative least squares on the reprojection error).

Landmark ordering follows the 68-point Multi-PIE markup (1-based in docs,
0-based in arrays): 1-17 jawline, 18-27 eyebrows, 28-36 nose, 37-48 eyes,
49-68 lips. The alignment subset drops the 12 in-and-around-eye points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .geometry import CameraIntrinsics

# 1-based landmark indices excluded from the alignment subset (the eyes).
EYE_INDICES = tuple(range(37, 49))
LEFT_EYE = tuple(range(37, 43))
RIGHT_EYE = tuple(range(43, 49))
N_LANDMARKS = 68
N_SUBSET = 56
# Eyes + nose drive the per-frame normalization box.
NORMALIZE_INDICES = tuple(range(28, 37)) + EYE_INDICES


class LandmarkError(ValueError):
    pass


class PoseDivergence(ArithmeticError):
    """The reprojection solve failed to reach a plausible pose."""


@dataclass(frozen=True)
class LandmarkSet:
    """68 ordered 2D points with per-point confidence in [0, 1]."""

    points: np.ndarray      # (68, 2) float
    confidence: np.ndarray  # (68,) float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        conf = np.asarray(self.confidence, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise LandmarkError(f"expected (68, 2) points, got {pts.shape}")
        if conf.shape != (N_LANDMARKS,):
            raise LandmarkError(f"expected (68,) confidences, got {conf.shape}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", np.clip(conf, 0.0, 1.0))

    @classmethod
    def from_points(cls, points, confidence: float = 1.0) -> "LandmarkSet":
        points = np.asarray(points, dtype=np.float64)
        return cls(points, np.full(len(points), confidence))

    def eye_points(self, side: str) -> np.ndarray:
        idx = LEFT_EYE if side == "left" else RIGHT_EYE
        return self.points[[i - 1 for i in idx]]


@dataclass(frozen=True)
class HeadPose:
    yaw: float
    pitch: float
    roll: float
    t: np.ndarray  # (3,) translation, model units
    reprojection_rmse: float

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            v = getattr(self, name)
            if not -90.0 < v < 90.0:
                raise PoseDivergence(f"{name}={v:.2f} outside (-90, 90)")
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))


def landmark_subset_56(lm: LandmarkSet) -> tuple[np.ndarray, np.ndarray]:
    """Drop the 12 eye landmarks, preserving order; returns (points, conf)."""
    keep = [i for i in range(N_LANDMARKS) if (i + 1) not in EYE_INDICES]
    return lm.points[keep], lm.confidence[keep]


def normalize_landmarks(lm: LandmarkSet) -> np.ndarray:
    """Translate/scale all 68 points by the eyes+nose bounding box.

    Stateless: only the running frame is used, so the output is invariant to
    translation and uniform scaling of the input. Raises on a degenerate
    (zero-diagonal) box or when any box point has zero confidence.
    """
    idx = [i - 1 for i in NORMALIZE_INDICES]
    if np.any(lm.confidence[idx] <= 0.0):
        raise LandmarkError("eyes+nose landmarks missing or zero-confidence")
    box = lm.points[idx]
    lo = box.min(axis=0)
    hi = box.max(axis=0)
    diagonal = float(np.hypot(*(hi - lo)))
    if diagonal < 1e-9:
        raise LandmarkError("degenerate eyes+nose bounding box")
    center = (lo + hi) / 2.0
    return (lm.points - center) / diagonal


# ---------------------------------------------------------------------------
# 3D reference face

def load_face_model(path=None) -> np.ndarray:
    """The rigid 68-point reference face, (68, 3) in model units.

    x grows toward the image right, y downward, z away from the camera; the
    nose tip therefore carries the most negative z.
    """
    if path is None:
        ref = resources.files("drivewatch").joinpath("data/face_model_68.csv")
        with ref.open("r") as fh:
            rows = list(csv.DictReader(fh))
    else:
        with open(path, "r") as fh:
            rows = list(csv.DictReader(fh))
    if len(rows) != N_LANDMARKS:
        raise LandmarkError(f"face model has {len(rows)} points, wanted 68")
    rows.sort(key=lambda r: int(r["index"]))
    return np.array([[float(r["x"]), float(r["y"]), float(r["z"])]
                     for r in rows])


def face_model_subset_56(model: np.ndarray) -> np.ndarray:
    keep = [i for i in range(N_LANDMARKS) if (i + 1) not in EYE_INDICES]
    return model[keep]


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """R = Ry(yaw) @ Rx(pitch) @ Rz(roll), angles in degrees.

    Axes follow the model convention (x right, y down, z away); negative yaw
    reads as the driver looking to their left.
    """
    ya, pa, ra = np.radians([yaw, pitch, roll])
    ry = np.array([[np.cos(ya), 0, np.sin(ya)],
                   [0, 1, 0],
                   [-np.sin(ya), 0, np.cos(ya)]])
    rx = np.array([[1, 0, 0],
                   [0, np.cos(pa), -np.sin(pa)],
                   [0, np.sin(pa), np.cos(pa)]])
    rz = np.array([[np.cos(ra), -np.sin(ra), 0],
                   [np.sin(ra), np.cos(ra), 0],
                   [0, 0, 1]])
    return ry @ rx @ rz


def project_points(model: np.ndarray, yaw: float, pitch: float, roll: float,
                   t: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of rotated+translated model points (no distortion)."""
    r = rotation_matrix(yaw, pitch, roll)
    pc = model @ r.T + np.asarray(t, dtype=np.float64)
    z = pc[:, 2]
    if np.any(z <= 1e-9):
        raise PoseDivergence("model point at or behind the camera plane")
    return np.stack([cam.fx * pc[:, 0] / z + cam.cx,
                     cam.fy * pc[:, 1] / z + cam.cy], axis=1)


def _check_non_coplanar(model: np.ndarray) -> None:
    centered = model - model.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s[2] < 1e-6 * s[0]:
        raise LandmarkError("model points are (near-)coplanar")


def estimate_head_pose(
    points2d: np.ndarray,
    model3d: np.ndarray,
    cam: CameraIntrinsics,
    confidence: np.ndarray | None = None,
    max_iter: int = 100,
    step_tol: float = 1e-8,
    rmse_threshold: float = 10.0,
) -> HeadPose:
    """Recover yaw/pitch/roll and translation from 2D-3D correspondences.

    Levenberg-Marquardt on the squared pixel reprojection error, initialized
    at the frontal pose with depth from the model/image size ratio. Needs at
    least 6 confident correspondences and a non-coplanar model; raises
    PoseDivergence when the final RMSE stays above ``rmse_threshold``.
    """
    pts = np.asarray(points2d, dtype=np.float64)
    model = np.asarray(model3d, dtype=np.float64)
    if pts.shape[0] != model.shape[0]:
        raise LandmarkError("2D/3D correspondence counts differ")
    conf = (np.ones(len(pts)) if confidence is None
            else np.asarray(confidence, dtype=np.float64))
    keep = conf > 0.0
    if keep.sum() < 6:
        raise LandmarkError(f"only {int(keep.sum())} confident points; need 6")
    pts, model, conf = pts[keep], model[keep], conf[keep]
    _check_non_coplanar(model)
    sqrt_w = np.sqrt(conf)

    span_model = float(np.ptp(model[:, 0]))
    span_img = max(float(np.ptp(pts[:, 0])), 1e-6)
    z0 = cam.fx * span_model / span_img
    mean_uv = pts.mean(axis=0)
    t0 = np.array([(mean_uv[0] - cam.cx) / cam.fx * z0,
                   (mean_uv[1] - cam.cy) / cam.fy * z0,
                   z0]) - model.mean(axis=0)
    params = np.array([0.0, 0.0, 0.0, *t0])

    def residuals(p):
        proj = project_points(model, p[0], p[1], p[2], p[3:], cam)
        return ((proj - pts) * sqrt_w[:, None]).ravel()

    def cost(r):
        return float(r @ r)

    r = residuals(params)
    lam = 1e-3
    eps = 1e-5
    for _ in range(max_iter):
        jac = np.empty((r.size, 6))
        for k in range(6):
            bumped = params.copy()
            bumped[k] += eps
            lowered = params.copy()
            lowered[k] -= eps
            jac[:, k] = (residuals(bumped) - residuals(lowered)) / (2 * eps)
        jtj = jac.T @ jac
        jtr = jac.T @ r
        step = None
        for _ in range(8):
            try:
                delta = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj)) +
                                        1e-12 * np.eye(6), -jtr)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = params + delta
            try:
                r_trial = residuals(trial)
            except PoseDivergence:
                lam *= 10.0
                continue
            if cost(r_trial) < cost(r):
                params, r = trial, r_trial
                lam = max(lam / 3.0, 1e-12)
                step = delta
                break
            lam *= 10.0
        if step is None or np.linalg.norm(step) < step_tol:
            break

    n_pts = len(pts)
    rmse = float(np.sqrt(cost(r) / max(conf.sum(), 1e-12)))
    if rmse > rmse_threshold:
        raise PoseDivergence(
            f"reprojection rmse {rmse:.2f}px above {rmse_threshold}px "
            f"after {max_iter} iterations ({n_pts} points)")

    def wrap(angle):
        return (angle + 180.0) % 360.0 - 180.0

    return HeadPose(wrap(params[0]), wrap(params[1]), wrap(params[2]),
                    params[3:], rmse)
