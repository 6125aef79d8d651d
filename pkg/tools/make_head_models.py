"""Regenerate the built-in coarse 3D head models in src/landmark_cascade/data.

Units: the head half-width is 1. Axes follow the camera: x right, y down,
z away from the viewer, so the nose tip has the most negative z.
"""
import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "landmark_cascade" / "data"


def surface_z(x, y):
    # front half of an ellipsoid with semi-axes (1, 1.35, 0.9)
    r = 1.0 - x ** 2 - (y / 1.35) ** 2
    return -0.9 * np.sqrt(np.clip(r, 0.0, None))


def ellipse(cx, cy, ax, ay, n, start=np.pi, closed=True):
    t = start + np.linspace(0, 2 * np.pi, n, endpoint=False) * (1 if closed else 0)
    return np.stack([cx + ax * np.cos(t), cy - ay * np.sin(t)], axis=1)


def face68():
    pts = []
    # jaw 0-16, image-left to image-right through the chin
    t = np.linspace(0, 1, 17)
    jx = -np.cos(np.pi * t) * 0.95
    jy = 0.05 + np.sin(np.pi * t) * 1.12
    pts += list(zip(jx, jy))
    # brows 17-21, 22-26
    for cx in (-0.42, 0.42):
        bx = cx + np.linspace(-0.3, 0.3, 5)
        by = -0.52 - 0.08 * np.cos(np.linspace(-np.pi / 2, np.pi / 2, 5))
        pts += list(zip(bx, by))
    # nose bridge 27-30
    pts += [(0.0, y) for y in np.linspace(-0.32, 0.22, 4)]
    # nostrils 31-35
    pts += [(x, 0.36 - 0.04 * np.cos(x * np.pi / 0.4)) for x in np.linspace(-0.2, 0.2, 5)]
    # eyes 36-41, 42-47 (outer corner first for the left eye)
    for cx, outer_first in ((-0.4, True), (0.4, False)):
        t = np.linspace(0, 2 * np.pi, 6, endpoint=False)
        sign = -1 if outer_first else 1
        ex = cx + sign * 0.17 * np.cos(t)
        ey = -0.25 - 0.07 * np.sin(t)
        pts += list(zip(ex, ey))
    # outer mouth 48-59, inner mouth 60-67
    t = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts += list(zip(-0.38 * np.cos(t), 0.72 - 0.14 * np.sin(t)))
    t = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts += list(zip(-0.25 * np.cos(t), 0.72 - 0.05 * np.sin(t)))

    xy = np.array(pts, dtype=float)
    z = surface_z(xy[:, 0], xy[:, 1])
    z[27:31] = np.linspace(-0.95, -1.25, 4)     # nose bridge protrudes
    z[31:36] = -1.0
    return np.column_stack([xy, z])


def main():
    p68 = face68()
    left_eye = p68[36:42].mean(axis=0)
    right_eye = p68[42:48].mean(axis=0)
    p5 = np.array([left_eye, right_eye, p68[30], p68[48], p68[54]])
    p8 = p68[[36, 39, 42, 45, 31, 35, 48, 54]]
    models = {
        "face68": (p68, [36, 45], "68-point face layout"),
        "face5": (p5, [0, 1], "eye centres, nose tip, mouth corners"),
        "sheep8": (p8, [0, 3], "8-point sparse subset of face68"),
    }
    OUT.mkdir(parents=True, exist_ok=True)
    for name, (pts, iod, desc) in models.items():
        rows = ",\n  ".join(json.dumps([round(float(v), 6) for v in p]) for p in pts)
        head = json.dumps({"name": name, "description": desc, "iod": iod})[:-1]
        (OUT / f"{name}.json").write_text(f'{head}, "points": [\n  {rows}\n]}}\n')


if __name__ == "__main__":
    main()
