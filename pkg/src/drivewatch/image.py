"""Raster image buffers, color conversion, and binary PPM/PGM file IO."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ImageError(ValueError):
    """Raised for malformed images or image files."""


@dataclass(frozen=True)
class ImageBuffer:
    """A row-major raster frame with 1 (gray) or 3 (RGB) channels.

    ``pixels`` is always a ``(height, width, channels)`` uint8 array; sample
    values live in [0, 255].
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, np.newaxis]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ImageError(f"expected (h, w, 1|3) pixel array, got shape {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise ImageError("empty image")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @classmethod
    def full(cls, width: int, height: int, color) -> "ImageBuffer":
        """Solid-color image; ``color`` is a scalar or an RGB triple."""
        color = np.atleast_1d(np.asarray(color, dtype=np.uint8))
        return cls(np.broadcast_to(color, (height, width, color.size)).copy())

    def as_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)

    def gray(self) -> np.ndarray:
        """Luminance plane as float64 (Rec.601 weights for RGB input)."""
        px = self.as_float()
        if self.channels == 1:
            return px[:, :, 0]
        return 0.299 * px[:, :, 0] + 0.587 * px[:, :, 1] + 0.114 * px[:, :, 2]


def quantize(values: np.ndarray) -> np.ndarray:
    """Round half-up to uint8, clipping to [0, 255]. Deterministic."""
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def rgb_to_hls(img: ImageBuffer) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Convert RGB to HLS planes.

    H is in [0, 180) (degrees halved), L and S in [0, 255], all float64.
    Raises ImageError for single-channel input.
    """
    if img.channels != 3:
        raise ImageError("HLS conversion requires a 3-channel image")
    px = img.as_float()
    r, g, b = px[:, :, 0], px[:, :, 1], px[:, :, 2]
    maxc = np.maximum(np.maximum(r, g), b)
    minc = np.minimum(np.minimum(r, g), b)
    delta = maxc - minc
    lum = (maxc + minc) / 2.0

    sat = np.zeros_like(lum)
    chromatic = delta > 0
    lo = chromatic & (lum <= 127.5)
    hi = chromatic & (lum > 127.5)
    sat[lo] = delta[lo] * 255.0 / (maxc + minc)[lo]
    sat[hi] = delta[hi] * 255.0 / (510.0 - maxc - minc)[hi]

    hue = np.zeros_like(lum)
    safe = np.where(chromatic, delta, 1.0)
    is_r = chromatic & (maxc == r)
    is_g = chromatic & ~is_r & (maxc == g)
    is_b = chromatic & ~is_r & ~is_g
    hue[is_r] = (60.0 * ((g - b) / safe))[is_r] % 360.0
    hue[is_g] = (60.0 * ((b - r) / safe) + 120.0)[is_g]
    hue[is_b] = (60.0 * ((r - g) / safe) + 240.0)[is_b]
    return hue / 2.0, lum, sat


def resize_bilinear(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a single float plane, pixel centers aligned."""
    h, w = plane.shape
    plane = np.asarray(plane, dtype=np.float64)
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = plane[y0][:, x0] * (1 - wx) + plane[y0][:, x1] * wx
    bot = plane[y1][:, x0] * (1 - wx) + plane[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


# ---------------------------------------------------------------------------
# Netpbm IO: binary PPM (P6) for color, binary PGM (P5) for grayscale.

def _read_netpbm_header(blob: bytes, magic: bytes):
    if not blob.startswith(magic):
        raise ImageError(f"not a {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageError("truncated netpbm header")
        fields.append(int(blob[start:pos]))
    return fields[0], fields[1], fields[2], pos + 1


def write_ppm(path, img: ImageBuffer) -> None:
    if img.channels != 3:
        raise ImageError("PPM requires a 3-channel image")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (img.width, img.height))
        fh.write(img.pixels.tobytes())


def read_ppm(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        blob = fh.read()
    w, h, maxval, offset = _read_netpbm_header(blob, b"P6")
    if maxval != 255:
        raise ImageError(f"unsupported maxval {maxval}")
    if len(blob) - offset < w * h * 3:
        raise ImageError("truncated PPM payload")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h * 3, offset=offset)
    return ImageBuffer(data.reshape(h, w, 3).copy())


def write_pgm(path, plane: np.ndarray) -> None:
    plane = np.ascontiguousarray(plane, dtype=np.uint8)
    if plane.ndim != 2:
        raise ImageError("PGM requires a 2-d plane")
    h, w = plane.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(plane.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    w, h, maxval, offset = _read_netpbm_header(blob, b"P5")
    if maxval != 255:
        raise ImageError(f"unsupported maxval {maxval}")
    if len(blob) - offset < w * h:
        raise ImageError("truncated PGM payload")
    data = np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=offset)
    return data.reshape(h, w).copy()
