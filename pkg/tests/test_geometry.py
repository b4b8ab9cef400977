import numpy as np
import pytest

from drivewatch.geometry import (
    CameraIntrinsics,
    GeometryError,
    Homography,
    distort_points,
    perspective_from_quads,
    undistort,
    undistort_points,
    warp,
)
from drivewatch.image import ImageBuffer, quantize


def pinhole(k1=0.0, k2=0.0, k3=0.0, p1=0.0, p2=0.0):
    return CameraIntrinsics(fx=300.0, fy=300.0, cx=160.0, cy=120.0,
                            k1=k1, k2=k2, k3=k3, p1=p1, p2=p2)


def oracle_distort(points, cam):
    """Independent forward radial-tangential distortion, scalar math."""
    out = []
    for px, py in points:
        x = (px - cam.cx) / cam.fx
        y = (py - cam.cy) / cam.fy
        r2 = x * x + y * y
        rad = 1 + cam.k1 * r2 + cam.k2 * r2 ** 2 + cam.k3 * r2 ** 3
        xd = x * rad + 2 * cam.p1 * x * y + cam.p2 * (r2 + 2 * x * x)
        yd = y * rad + cam.p1 * (r2 + 2 * y * y) + 2 * cam.p2 * x * y
        out.append((xd * cam.fx + cam.cx, yd * cam.fy + cam.cy))
    return np.array(out)


# ---------------------------------------------------------------------------
# undistort

def test_undistort_zero_coefficients_is_identity():
    rng = np.random.RandomState(3)
    img = ImageBuffer(rng.randint(0, 256, size=(60, 80, 3), dtype=np.uint8))
    out = undistort(img, pinhole())
    assert np.array_equal(out.pixels, img.pixels)


def test_principal_point_is_fixed_for_any_coefficients():
    cam = pinhole(k1=-0.3, k2=0.08, k3=-0.01, p1=0.002, p2=-0.001)
    pp = np.array([[cam.cx, cam.cy]])
    assert np.allclose(distort_points(pp, cam), pp)
    assert np.allclose(undistort_points(pp, cam), pp)


def test_undistort_points_inverts_forward_model():
    cam = pinhole(k1=-0.2, k2=0.03)
    rng = np.random.RandomState(7)
    pts = rng.uniform([40, 30], [280, 210], size=(50, 2))
    distorted = oracle_distort(pts, cam)
    recovered = undistort_points(distorted, cam, max_iter=20, tol=1e-9)
    assert np.max(np.hypot(*(recovered - pts).T)) < 1e-6


def _gaussian_dot_image(centers, w, h, sigma=1.2):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    acc = np.zeros((h, w))
    for cx, cy in centers:
        acc += np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
    return ImageBuffer(quantize(np.clip(acc, 0, 1) * 255.0))


def _centroid_near(plane, cx, cy, radius=5):
    h, w = plane.shape
    x0, x1 = int(cx) - radius, int(cx) + radius + 1
    y0, y1 = int(cy) - radius, int(cy) + radius + 1
    patch = plane[max(y0, 0):min(y1, h), max(x0, 0):min(x1, w)].astype(float)
    ys, xs = np.mgrid[max(y0, 0):min(y1, h), max(x0, 0):min(x1, w)]
    total = patch.sum()
    return (xs * patch).sum() / total, (ys * patch).sum() / total


def test_undistort_recovers_oracle_distorted_grid():
    # Oracle: draw dots at forward-distorted positions of a known grid;
    # undistorting that image must put the dots back on the grid.
    cam = pinhole(k1=-0.2)
    w, h = 320, 240
    grid = np.array([(x, y) for x in range(80, 260, 40)
                     for y in range(60, 200, 40)], dtype=np.float64)
    distorted_pos = oracle_distort(grid, cam)
    img = _gaussian_dot_image(distorted_pos, w, h)
    restored = undistort(img, cam)
    plane = restored.gray()
    errs = []
    for gx, gy in grid:
        mx, my = _centroid_near(plane, gx, gy)
        errs.append(np.hypot(mx - gx, my - gy))
    assert np.mean(errs) < 0.5


# ---------------------------------------------------------------------------
# perspective_from_quads

SQUARE = [(0.0, 0.0), (100.0, 0.0), (100.0, 100.0), (0.0, 100.0)]


def test_identity_and_translation_quads():
    h = perspective_from_quads(SQUARE, SQUARE)
    assert np.allclose(h.m, np.eye(3), atol=1e-12)

    shifted = [(x + 10.0, y + 5.0) for x, y in SQUARE]
    t = perspective_from_quads(SQUARE, shifted)
    expect = np.array([[1, 0, 10], [0, 1, 5], [0, 0, 1]], dtype=float)
    assert np.allclose(t.m, expect, atol=1e-12)


def oracle_dlt(src, dst):
    """Homogeneous SVD solution of the 2n x 9 correspondence system."""
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.array(rows))
    m = vt[-1].reshape(3, 3)
    return m / m[2, 2]


def test_trapezoid_to_rectangle_matches_dlt_oracle():
    src = [(120.0, 230.0), (200.0, 230.0), (300.0, 320.0), (20.0, 320.0)]
    dst = [(80.0, 0.0), (240.0, 0.0), (240.0, 360.0), (80.0, 360.0)]
    h = perspective_from_quads(src, dst)
    assert np.allclose(h.m, oracle_dlt(src, dst), atol=1e-9)
    # Post-condition: reproduces all four correspondences.
    mapped = h.apply(np.array(src))
    assert np.max(np.abs(mapped - np.array(dst))) < 1e-9


def test_collinear_quad_rejected():
    bad = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (5.0, 0.0)]
    with pytest.raises(GeometryError):
        perspective_from_quads(bad, SQUARE)
    with pytest.raises(GeometryError):
        perspective_from_quads(SQUARE, bad)


def test_singular_matrix_rejected():
    with pytest.raises(GeometryError):
        Homography(np.zeros((3, 3)))


# ---------------------------------------------------------------------------
# warp

def _textured(w, h, seed=11):
    rng = np.random.RandomState(seed)
    base = rng.randint(0, 256, size=(h // 4, w // 4, 3), dtype=np.uint8)
    return ImageBuffer(np.kron(base, np.ones((4, 4, 1), dtype=np.uint8)))


def _smooth_texture(w, h):
    # Low-frequency texture so bilinear resampling stays near-lossless.
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    r = 127 + 90 * np.sin(2 * np.pi * xs / 48) * np.cos(2 * np.pi * ys / 40)
    g = 127 + 90 * np.cos(2 * np.pi * (xs + ys) / 64)
    b = 127 + 90 * np.sin(2 * np.pi * ys / 56)
    return ImageBuffer(quantize(np.stack([r, g, b], axis=-1)))


def test_warp_identity_is_pixel_identical():
    img = _textured(64, 48)
    out = warp(img, Homography(), (64, 48))
    assert np.array_equal(out.pixels, img.pixels)


def test_warp_is_deterministic():
    img = _textured(64, 48, seed=5)
    src = [(5.0, 5.0), (60.0, 8.0), (58.0, 44.0), (2.0, 40.0)]
    dst = [(0.0, 0.0), (63.0, 0.0), (63.0, 47.0), (0.0, 47.0)]
    h = perspective_from_quads(src, dst)
    a = warp(img, h, (64, 48))
    b = warp(img, h, (64, 48))
    assert np.array_equal(a.pixels, b.pixels)


def test_warp_round_trip_bound():
    img = _smooth_texture(96, 96)
    src = [(10.0, 10.0), (85.0, 12.0), (88.0, 84.0), (8.0, 86.0)]
    dst = [(0.0, 0.0), (95.0, 0.0), (95.0, 95.0), (0.0, 95.0)]
    h = perspective_from_quads(src, dst)
    once = warp(img, h, (96, 96))
    back = warp(once, h.inverse(), (96, 96))

    # Doubly-valid region: pixels that stay in-frame through both warps.
    ys, xs = np.mgrid[0:96, 0:96].astype(float)
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    fwd = h.apply(pts)
    inside = ((fwd[:, 0] >= 1) & (fwd[:, 0] <= 94) &
              (fwd[:, 1] >= 1) & (fwd[:, 1] <= 94)).reshape(96, 96)
    inside &= (xs >= 1) & (xs <= 94) & (ys >= 1) & (ys <= 94)
    diff = np.abs(back.as_float() - img.as_float()).max(axis=2)
    assert np.max(diff[inside]) <= 2.0


def test_warp_maps_point_through_homography():
    src = [(12.0, 6.0), (52.0, 10.0), (56.0, 56.0), (6.0, 52.0)]
    dst = [(0.0, 0.0), (63.0, 0.0), (63.0, 63.0), (0.0, 63.0)]
    h = perspective_from_quads(src, dst)
    px = np.zeros((64, 64, 3), dtype=np.uint8)
    p = (30, 24)  # x, y
    px[p[1], p[0]] = 255
    out = warp(ImageBuffer(px), h, (64, 64))
    bright = np.unravel_index(np.argmax(out.gray()), (64, 64))
    expect = h.apply(np.array([p], dtype=float))[0]
    assert np.hypot(bright[1] - expect[0], bright[0] - expect[1]) <= 1.0


def test_warp_rejects_singular_homography():
    img = _textured(32, 32)
    with pytest.raises(GeometryError):
        warp(img, Homography(np.diag([1.0, 1.0, 1e-12])), (32, 32))


def test_intrinsics_validation():
    with pytest.raises(GeometryError):
        CameraIntrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)
