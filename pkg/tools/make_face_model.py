#!/usr/bin/env python3
"""Generate the rigid 68-point reference face shipped with the package.

Produces src/drivewatch/data/face_model_68.csv: a stylized but plausibly
proportioned face in the Multi-PIE landmark ordering. Units are millimeters;
x grows to the image right, y downward, z away from the camera (the nose tip
sits at the most negative z). Run once; the CSV is checked in.
"""

import csv
import pathlib

import numpy as np

OUT = pathlib.Path(__file__).resolve().parents[1] / \
    "src" / "drivewatch" / "data" / "face_model_68.csv"


def jawline():
    # 17 points from the subject's right ear (image left) around the chin.
    pts = []
    for i, frac in enumerate(np.linspace(0.0, 1.0, 17)):
        ang = np.pi * frac  # 0 = image-left ear, pi = image-right ear
        x = -72.0 * np.cos(ang)
        y = -5.0 + 72.0 * np.sin(ang) * 0.95
        z = 18.0 - 30.0 * np.sin(ang)  # ears far, chin forward
        pts.append((x, y, z))
    return pts


def eyebrow(x_sign):
    xs = x_sign * np.array([52.0, 42.0, 31.0, 21.0, 12.0])
    ys = np.array([-36.0, -40.0, -42.0, -41.0, -38.0])
    zs = np.array([-2.0, -6.0, -8.0, -9.0, -9.0])
    return list(zip(xs, ys, zs))


def nose():
    bridge = [(0.0, -28.0 + 12.0 * i, -12.0 - 7.5 * i) for i in range(4)]
    base = [(-14.0, 14.0, -22.0), (-7.0, 16.0, -27.0), (0.0, 17.0, -31.0),
            (7.0, 16.0, -27.0), (14.0, 14.0, -22.0)]
    return bridge + base


def eye(cx):
    # p1..p6: outer corner, two upper-lid, inner corner, two lower-lid.
    sx = 1.0 if cx > 0 else -1.0
    return [
        (cx - sx * 15.0, -25.0, -6.0),
        (cx - sx * 7.0, -29.0, -8.0),
        (cx + sx * 4.0, -29.0, -8.0),
        (cx + sx * 13.0, -25.0, -6.0),
        (cx + sx * 4.0, -21.0, -8.0),
        (cx - sx * 7.0, -21.0, -8.0),
    ]


def mouth():
    outer = []
    for i in range(12):
        ang = np.pi * (1.0 - i / 6.0)
        x = 26.0 * np.cos(ang)
        y = 40.0 + 11.0 * (-np.sin(ang) if i <= 6 else 0.85 * -np.sin(ang))
        z = -16.0 - 6.0 * abs(np.cos(ang))
        outer.append((x, -(-y), z))
    inner = []
    for i in range(8):
        ang = np.pi * (1.0 - i / 4.0)
        x = 15.0 * np.cos(ang)
        y = 40.0 + 5.0 * -np.sin(ang) * (1.0 if i <= 4 else -1.0)
        inner.append((x, y, -17.0))
    return [(x, y, z) for x, y, z in outer] + inner


def main():
    points = (jawline()
              + eyebrow(-1) + eyebrow(+1)[::-1]
              + nose()
              + eye(-31.0) + eye(+31.0)
              + mouth())
    assert len(points) == 68, len(points)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x", "y", "z"])
        for i, (x, y, z) in enumerate(points, start=1):
            writer.writerow([i, f"{x:.3f}", f"{y:.3f}", f"{z:.3f}"])
    print(f"wrote {OUT} ({len(points)} points)")


if __name__ == "__main__":
    main()
