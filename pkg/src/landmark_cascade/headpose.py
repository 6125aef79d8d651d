"""Head pose from 2D landmarks and a rigid 3D landmark model via POSIT.

Camera axes: x right, y down, z away from the viewer. Rotations are
composed as ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)`` and map model
coordinates into camera coordinates. Angles are in degrees.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import as_shape

BUILTIN_MODELS = {5: "face5", 8: "sheep8", 68: "face68"}
COPLANAR_RATIO = 1e-6


class PoseError(ValueError):
    pass


@dataclass(frozen=True)
class Model3D:
    """Rigid 3D landmark model; stored with point 0 at the origin."""

    points: np.ndarray
    name: str = "custom"
    iod: tuple[int, int] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise PoseError(f"3D model must be (K, 3), got {pts.shape}")
        if pts.shape[0] < 4:
            raise PoseError("3D model needs at least 4 points")
        if not np.all(np.isfinite(pts)):
            raise PoseError("3D model has non-finite coordinates")
        pts = pts - pts[0]
        sv = np.linalg.svd(pts[1:], compute_uv=False)
        if sv[0] == 0 or sv[-1] / sv[0] < COPLANAR_RATIO:
            raise PoseError("3D model points are coplanar or degenerate")
        object.__setattr__(self, "points", pts)

    @property
    def k(self) -> int:
        return self.points.shape[0]

    @classmethod
    def from_json(cls, text: str, name: str = "custom") -> "Model3D":
        doc = json.loads(text)
        iod = tuple(doc["iod"]) if doc.get("iod") else None
        return cls(np.array(doc["points"], dtype=np.float64), doc.get("name", name), iod)

    @classmethod
    def load(cls, path) -> "Model3D":
        path = Path(path)
        return cls.from_json(path.read_text(), name=path.stem)

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "iod": list(self.iod) if self.iod else None,
                           "points": self.points.tolist()})


def _builtin_text(name: str) -> str:
    data = resources.files("landmark_cascade").joinpath("data")
    return data.joinpath(f"{name}.json").read_text()


def builtin_model(name: str) -> Model3D:
    return Model3D.from_json(_builtin_text(name), name=name)


def builtin_points(name: str) -> np.ndarray:
    """Built-in template in its own head-centred frame (not re-anchored)."""
    return np.array(json.loads(_builtin_text(name))["points"], dtype=np.float64)


def builtin_model_for_k(k: int) -> Model3D:
    try:
        return builtin_model(BUILTIN_MODELS[k])
    except KeyError:
        raise PoseError(f"no built-in 3D model with {k} landmarks; supply one") from None


@dataclass(frozen=True)
class CameraIntrinsics:
    focal: float
    cx: float
    cy: float

    def __post_init__(self):
        if not self.focal > 0:
            raise PoseError("focal length must be positive")

    @classmethod
    def for_image(cls, width: int, height: int, focal_factor: float = 1.5):
        """Focal length ``focal_factor * width``, principal point at the centre."""
        return cls(focal_factor * width, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class PoseEstimate:
    pitch: float
    yaw: float
    roll: float
    translation: tuple[float, float, float]
    converged: bool
    iterations: int

    @property
    def angles(self) -> tuple[float, float, float]:
        return (self.pitch, self.yaw, self.roll)

    def rotation(self) -> np.ndarray:
        return rotation_from_euler(self.pitch, self.yaw, self.roll)


def rotation_from_euler(pitch: float, yaw: float, roll: float) -> np.ndarray:
    p, y, r = np.radians([pitch, yaw, roll])
    cp, sp = math.cos(p), math.sin(p)
    cy, sy = math.cos(y), math.sin(y)
    cr, sr = math.cos(r), math.sin(r)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _wrap(deg: float) -> float:
    # into (-180, 180]
    deg = math.fmod(deg, 360.0)
    if deg <= -180.0:
        deg += 360.0
    elif deg > 180.0:
        deg -= 360.0
    return deg


def euler_from_rotation(rot) -> tuple[float, float, float]:
    """Decompose ``Rz(roll) Ry(yaw) Rx(pitch)`` into ``(pitch, yaw, roll)``.

    At gimbal lock (``|yaw| = 90``) roll is set to zero and the whole
    remaining rotation is attributed to pitch.
    """
    R = np.asarray(rot, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise PoseError("rotation must be a finite 3x3 matrix")
    if np.linalg.norm(R.T @ R - np.eye(3)) >= 1e-6:
        raise PoseError("rotation matrix is not orthonormal")
    sy = -R[2, 0]
    cy = math.hypot(R[0, 0], R[1, 0])
    yaw = math.atan2(sy, cy)
    if cy < 1e-9:
        roll = 0.0
        pitch = math.atan2(-R[1, 2], R[1, 1])
    else:
        pitch = math.atan2(R[2, 1], R[2, 2])
        roll = math.atan2(R[1, 0], R[0, 0])
    return tuple(_wrap(math.degrees(a)) for a in (pitch, yaw, roll))


def project(model: Model3D, rot, translation, cam: CameraIntrinsics) -> np.ndarray:
    """Perspective projection of the model posed by ``(rot, translation)``."""
    pc = model.points @ np.asarray(rot).T + np.asarray(translation, dtype=np.float64)
    if np.any(pc[:, 2] <= 0):
        raise PoseError("model point behind the camera")
    return np.column_stack([cam.focal * pc[:, 0] / pc[:, 2] + cam.cx,
                            cam.focal * pc[:, 1] / pc[:, 2] + cam.cy])


def posit(points2d, model: Model3D, cam: CameraIntrinsics, tol: float = 1e-6,
          max_iter: int = 100) -> PoseEstimate:
    """Pose from orthography and scaling with iterations (DeMenthon & Davis).

    Each iteration solves the scaled-orthographic pose for the current
    perspective corrections ``eps``, rebuilds an orthonormal rotation from
    the two recovered rows via cross products, and updates ``eps``. Stops
    when no correction moves by more than ``tol``. Non-convergence is
    reported through ``converged=False``.
    """
    img = as_shape(points2d)
    if img.shape[0] != model.k:
        raise PoseError(f"landmark count mismatch: {img.shape[0]} vs model {model.k}")
    A = model.points[1:]
    B = np.linalg.pinv(A)
    x = (img[:, 0] - cam.cx) / cam.focal
    y = (img[:, 1] - cam.cy) / cam.focal
    eps = np.zeros(model.k - 1)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        I = B @ (x[1:] * (1.0 + eps) - x[0])
        J = B @ (y[1:] * (1.0 + eps) - y[0])
        n_i, n_j = np.linalg.norm(I), np.linalg.norm(J)
        if n_i == 0 or n_j == 0:
            raise PoseError("degenerate 2D configuration")
        scale = 0.5 * (n_i + n_j)
        ri = I / n_i
        rk = np.cross(ri, J / n_j)
        rk /= np.linalg.norm(rk)
        rj = np.cross(rk, ri)
        z0 = 1.0 / scale
        new_eps = A @ rk / z0
        delta = np.max(np.abs(new_eps - eps))
        eps = new_eps
        if delta < tol:
            converged = True
            break
    R = np.vstack([ri, rj, rk])
    pitch, yaw, roll = euler_from_rotation(R)
    t = (x[0] * z0, y[0] * z0, z0)
    return PoseEstimate(pitch, yaw, roll, tuple(float(v) for v in t), converged, it)


def significant_angle(pose) -> float:
    """The signed Euler angle with the largest magnitude.

    Ties resolve in the order pitch, yaw, roll. Accepts a
    :class:`PoseEstimate` or a ``(pitch, yaw, roll)`` triple.
    """
    angles = pose.angles if isinstance(pose, PoseEstimate) else tuple(pose)
    best = angles[0]
    for a in angles[1:]:
        if abs(a) > abs(best):
            best = a
    return float(best)
