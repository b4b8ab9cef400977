"""Pinhole camera model, lens distortion correction, and planar homographies.

Coordinate conventions: image x grows right, y grows down, both in pixels.
Homographies act on homogeneous pixel coordinates, source -> destination.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .image import ImageBuffer, quantize

DET_EPSILON = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate geometry (collinear quads, singular mappings)."""


@dataclass(frozen=True)
class CameraIntrinsics:
    """Focal lengths/principal point plus radial-tangential distortion.

    k1..k3 are the radial coefficients, p1/p2 the tangential ones; all are
    zero for an ideal pinhole.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")

    @property
    def has_distortion(self) -> bool:
        return any((self.k1, self.k2, self.k3, self.p1, self.p2))

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Homography:
    """3x3 planar projective map, normalized so m[2,2] == 1."""

    m: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise GeometryError("homography must be 3x3")
        det = np.linalg.det(m)
        if abs(det) < DET_EPSILON:
            raise GeometryError(f"homography is singular (det={det:.3e})")
        if m[2, 2] != 0:
            m = m / m[2, 2]
        object.__setattr__(self, "m", m)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map an (n, 2) array of points; returns (n, 2)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        ones = np.ones((pts.shape[0], 1))
        proj = np.hstack([pts, ones]) @ self.m.T
        return proj[:, :2] / proj[:, 2:3]


def _check_no_collinear(points: np.ndarray, label: str) -> None:
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape != (4, 2):
        raise GeometryError(f"{label} quad must contain exactly 4 points")
    for skip in range(4):
        tri = np.delete(pts, skip, axis=0)
        u, v = tri[1] - tri[0], tri[2] - tri[0]
        area = u[0] * v[1] - u[1] * v[0]
        if abs(area) < 1e-9:
            raise GeometryError(f"{label} quad has three collinear points")


def perspective_from_quads(src, dst) -> Homography:
    """Homography mapping each of 4 src points onto its dst point.

    Solves the standard 8x8 linear correspondence system; raises
    GeometryError when either quad is degenerate.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    _check_no_collinear(src, "src")
    _check_no_collinear(dst, "dst")

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise GeometryError(f"degenerate correspondence system: {exc}") from exc
    return Homography(np.append(h, 1.0).reshape(3, 3))


class BilinearMap:
    """Precomputed sampling indices/weights for a fixed source size and a
    fixed set of fractional coordinates; reusable across channels/frames."""

    def __init__(self, xs: np.ndarray, ys: np.ndarray, src_h: int, src_w: int):
        self.valid = ((xs >= 0.0) & (xs <= src_w - 1.0)
                      & (ys >= 0.0) & (ys <= src_h - 1.0))
        xc = np.clip(xs, 0.0, src_w - 1.0)
        yc = np.clip(ys, 0.0, src_h - 1.0)
        self.x0 = np.floor(xc).astype(np.intp)
        self.y0 = np.floor(yc).astype(np.intp)
        self.x1 = np.minimum(self.x0 + 1, src_w - 1)
        self.y1 = np.minimum(self.y0 + 1, src_h - 1)
        self.wx = xc - self.x0
        self.wy = yc - self.y0

    def sample(self, plane: np.ndarray, fill: float) -> np.ndarray:
        top = (plane[self.y0, self.x0] * (1 - self.wx)
               + plane[self.y0, self.x1] * self.wx)
        bot = (plane[self.y1, self.x0] * (1 - self.wx)
               + plane[self.y1, self.x1] * self.wx)
        out = top * (1 - self.wy) + bot * self.wy
        out[~self.valid] = fill
        return out


def _bilinear_sample(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray,
                     fill: float) -> np.ndarray:
    """Sample a float plane at fractional coords; out-of-range gets fill."""
    h, w = plane.shape
    return BilinearMap(xs, ys, h, w).sample(plane, fill)


@lru_cache(maxsize=16)
def _warp_source_grid(inv_bytes: bytes, out_w: int, out_h: int
                      ) -> tuple[np.ndarray, np.ndarray]:
    inv = np.frombuffer(inv_bytes, dtype=np.float64).reshape(3, 3)
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    denom = inv[2, 0] * xs + inv[2, 1] * ys + inv[2, 2]
    sx = (inv[0, 0] * xs + inv[0, 1] * ys + inv[0, 2]) / denom
    sy = (inv[1, 0] * xs + inv[1, 1] * ys + inv[1, 2]) / denom
    return sx, sy


def warp(img: ImageBuffer, h: Homography, out_size: tuple[int, int],
         fill: float = 0.0) -> ImageBuffer:
    """Warp ``img`` by ``h`` into an (width, height) output buffer.

    Each output pixel is inverse-mapped through h and bilinearly sampled;
    pixels whose source falls outside the image get ``fill``. Deterministic.
    """
    out_w, out_h = out_size
    inv = h.inverse().m
    sx, sy = _warp_source_grid(inv.tobytes(), out_w, out_h)
    sampler = BilinearMap(sx, sy, img.height, img.width)
    planes = [sampler.sample(img.as_float()[:, :, c], fill)
              for c in range(img.channels)]
    return ImageBuffer(quantize(np.stack(planes, axis=-1)))


def warp_nearest(plane: np.ndarray, h: Homography, out_size: tuple[int, int],
                 fill: int = 0) -> np.ndarray:
    """Nearest-neighbor warp for label planes (class ids stay exact)."""
    out_w, out_h = out_size
    ph, pw = plane.shape
    inv = h.inverse().m
    gx, gy = _warp_source_grid(inv.tobytes(), out_w, out_h)
    sx = np.floor(gx + 0.5)
    sy = np.floor(gy + 0.5)
    valid = (sx >= 0) & (sx < pw) & (sy >= 0) & (sy < ph)
    out = np.full((out_h, out_w), fill, dtype=plane.dtype)
    out[valid] = plane[sy[valid].astype(int), sx[valid].astype(int)]
    return out


def distort_points(points: np.ndarray, cam: CameraIntrinsics) -> np.ndarray:
    """Forward radial-tangential model: ideal pixel coords -> distorted."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x = (pts[:, 0] - cam.cx) / cam.fx
    y = (pts[:, 1] - cam.cy) / cam.fy
    r2 = x * x + y * y
    radial = 1.0 + cam.k1 * r2 + cam.k2 * r2**2 + cam.k3 * r2**3
    xd = x * radial + 2 * cam.p1 * x * y + cam.p2 * (r2 + 2 * x * x)
    yd = y * radial + cam.p1 * (r2 + 2 * y * y) + 2 * cam.p2 * x * y
    return np.stack([xd * cam.fx + cam.cx, yd * cam.fy + cam.cy], axis=1)


def undistort_points(points: np.ndarray, cam: CameraIntrinsics,
                     max_iter: int = 10, tol: float = 1e-6) -> np.ndarray:
    """Invert the distortion model by fixed-point iteration.

    No closed form exists once k3 is nonzero; raises GeometryError if the
    iteration has not converged to ``tol`` pixels within ``max_iter`` steps.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    xd = (pts[:, 0] - cam.cx) / cam.fx
    yd = (pts[:, 1] - cam.cy) / cam.fy
    x, y = xd.copy(), yd.copy()
    tol_n = tol / max(cam.fx, cam.fy)
    for _ in range(max_iter):
        r2 = x * x + y * y
        radial = 1.0 + cam.k1 * r2 + cam.k2 * r2**2 + cam.k3 * r2**3
        dx = 2 * cam.p1 * x * y + cam.p2 * (r2 + 2 * x * x)
        dy = cam.p1 * (r2 + 2 * y * y) + 2 * cam.p2 * x * y
        x_new = (xd - dx) / radial
        y_new = (yd - dy) / radial
        step = np.max(np.hypot(x_new - x, y_new - y)) if x.size else 0.0
        x, y = x_new, y_new
        if step < tol_n:
            break
    else:
        raise GeometryError(
            f"distortion inversion did not converge in {max_iter} iterations"
        )
    return np.stack([x * cam.fx + cam.cx, y * cam.fy + cam.cy], axis=1)


def undistort(img: ImageBuffer, cam: CameraIntrinsics) -> ImageBuffer:
    """Remove lens distortion; output has the same dimensions.

    Each output (ideal) pixel is mapped through the forward distortion model
    to its source location and bilinearly sampled; sources outside the frame
    come out black. With all coefficients zero this is the identity.
    """
    if not cam.has_distortion:
        return ImageBuffer(img.pixels.copy())
    xs, ys = np.meshgrid(np.arange(img.width, dtype=np.float64),
                         np.arange(img.height, dtype=np.float64))
    grid = np.stack([xs.ravel(), ys.ravel()], axis=1)
    src = distort_points(grid, cam)
    sx = src[:, 0].reshape(img.height, img.width)
    sy = src[:, 1].reshape(img.height, img.width)
    sampler = BilinearMap(sx, sy, img.height, img.width)
    planes = [sampler.sample(img.as_float()[:, :, c], 0.0)
              for c in range(img.channels)]
    return ImageBuffer(quantize(np.stack(planes, axis=-1)))
