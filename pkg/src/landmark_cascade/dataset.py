"""Images, annotations, manifests and the synthetic face generator.

Images are 2D ``uint8`` arrays indexed ``[row, col]``; landmark ``x`` is
the column and ``y`` the row.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, as_shape
from .headpose import CameraIntrinsics, builtin_points, rotation_from_euler

MIN_SYNTH_SIZE = 32
LAYOUTS = {5: "face5", 8: "sheep8", 68: "face68"}


class PtsParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class DataError(ValueError):
    """Malformed dataset files or inconsistent annotations."""


def as_image(arr) -> np.ndarray:
    img = np.asarray(arr)
    if img.ndim != 2 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DataError(f"image must be a non-empty 2D array, got shape {img.shape}")
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255):
            raise DataError("intensities outside [0, 255]")
        img = img.astype(np.uint8)
    return img


@dataclass
class Sample:
    image: np.ndarray
    box: BBox
    truth: np.ndarray | None = None
    pose: tuple[float, float, float] | None = None
    id: str = ""


# --- .pts ------------------------------------------------------------------

_HEADER_VERSION = re.compile(r"^version:\s*1\s*$")
_HEADER_COUNT = re.compile(r"^n_points:\s*(\d+)\s*$")


def parse_pts(text: str) -> np.ndarray:
    """Parse 300-W style ``.pts`` annotation text into a ``(K, 2)`` shape."""
    lines = text.replace("\r\n", "\n").split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines or not _HEADER_VERSION.match(lines[0].strip()):
        raise PtsParseError(1, "expected 'version: 1'")
    if len(lines) < 2:
        raise PtsParseError(2, "missing 'n_points' header")
    m = _HEADER_COUNT.match(lines[1].strip())
    if not m:
        raise PtsParseError(2, "expected 'n_points: <K>'")
    k = int(m.group(1))
    if len(lines) < 3 or lines[2].strip() != "{":
        raise PtsParseError(3, "expected '{'")
    pts = []
    lineno = 3
    for lineno, line in enumerate(lines[3:], start=4):
        s = line.strip()
        if s == "}":
            break
        toks = s.split()
        if len(toks) != 2:
            raise PtsParseError(lineno, f"expected two coordinates, got {s!r}")
        try:
            x, y = float(toks[0]), float(toks[1])
        except ValueError:
            raise PtsParseError(lineno, f"non-numeric coordinate in {s!r}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise PtsParseError(lineno, "non-finite coordinate")
        pts.append((x, y))
    else:
        raise PtsParseError(lineno + 1, "missing closing '}'")
    if len(pts) != k:
        raise PtsParseError(lineno, f"header declares {k} points, found {len(pts)}")
    if k == 0:
        raise PtsParseError(2, "n_points must be positive")
    return np.array(pts, dtype=np.float64)


def serialize_pts(shape) -> str:
    s = as_shape(shape, min_points=1)
    body = "".join(f"{x:.6f} {y:.6f}\n" for x, y in s)
    return f"version: 1\nn_points: {len(s)}\n{{\n{body}}}\n"


def read_pts(path) -> np.ndarray:
    return parse_pts(Path(path).read_text())


def write_pts(path, shape) -> None:
    Path(path).write_text(serialize_pts(shape), newline="\n")


# --- pixels -----------------------------------------------------------------

def to_grayscale(r, g, b):
    """Rec. 601 luma with round-half-up, computed in exact integer arithmetic.

    Works elementwise on arrays as well as on scalars.
    """
    r, g, b = (np.asarray(v, dtype=np.int64) for v in (r, g, b))
    y = (299 * r + 587 * g + 114 * b + 500) // 1000
    return int(y) if y.ndim == 0 else y.astype(np.uint8)


def sample_intensity(image, p) -> int:
    """Nearest-pixel lookup at ``(round(x), round(y))`` with edge clamping."""
    img = np.asarray(image)
    x = min(max(math.floor(float(p[0]) + 0.5), 0), img.shape[1] - 1)
    y = min(max(math.floor(float(p[1]) + 0.5), 0), img.shape[0] - 1)
    return int(img[y, x])


def load_image(path) -> np.ndarray:
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode in ("L", "1"):
            return np.asarray(im.convert("L"), dtype=np.uint8)
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return to_grayscale(rgb[..., 0], rgb[..., 1], rgb[..., 2])


def save_image(path, image) -> None:
    from PIL import Image as PILImage

    PILImage.fromarray(as_image(image), mode="L").save(path, format="PNG")


# --- manifests --------------------------------------------------------------

@dataclass
class ManifestEntry:
    image: str
    pts: str | None
    box: BBox
    pose: tuple[float, float, float] | None = None

    @property
    def id(self) -> str:
        return Path(self.image).stem


@dataclass
class DatasetManifest:
    k: int
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def to_json(self) -> str:
        doc = {
            "k": self.k,
            "entries": [
                {"image": e.image, "pts": e.pts, "box": e.box.as_list(),
                 "pose": list(e.pose) if e.pose is not None else None}
                for e in self.entries
            ],
        }
        return json.dumps(doc, indent=1) + "\n"


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        k = int(doc["k"])
        entries = []
        for raw in doc["entries"]:
            pose = raw.get("pose")
            entries.append(ManifestEntry(
                image=raw["image"],
                pts=raw.get("pts"),
                box=BBox.from_seq(raw["box"]),
                pose=tuple(float(v) for v in pose) if pose is not None else None,
            ))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid manifest {path}: {exc}") from exc
    if k < 1:
        raise DataError("manifest k must be positive")
    return DatasetManifest(k, entries, path.parent)


def load_samples(manifest: DatasetManifest, require_truth: bool = True) -> list[Sample]:
    samples = []
    for e in manifest.entries:
        truth = None
        if e.pts is not None:
            truth = read_pts(manifest.resolve(e.pts))
            if truth.shape[0] != manifest.k:
                raise DataError(f"{e.pts}: {truth.shape[0]} landmarks, manifest says {manifest.k}")
        elif require_truth:
            raise DataError(f"entry {e.image} has no annotation")
        samples.append(Sample(load_image(manifest.resolve(e.image)), e.box, truth, e.pose, e.id))
    return samples


def write_dataset(samples, out_dir) -> Path:
    """Write PNGs, ``.pts`` files and ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "pts").mkdir(parents=True, exist_ok=True)
    samples = list(samples)
    ks = {s.truth.shape[0] for s in samples if s.truth is not None}
    if len(ks) != 1:
        raise DataError("samples must share one landmark count")
    entries = []
    for s in samples:
        img_rel = f"images/{s.id}.png"
        pts_rel = f"pts/{s.id}.pts"
        save_image(out / img_rel, s.image)
        write_pts(out / pts_rel, s.truth)
        entries.append(ManifestEntry(img_rel, pts_rel, s.box, s.pose))
    manifest = DatasetManifest(ks.pop(), entries, out)
    path = out / "manifest.json"
    path.write_text(manifest.to_json())
    return path


# --- synthetic faces -------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the procedural face generator.

    Roll (in-plane rotation) follows ``pose_law``: ``"gaussian"`` with
    ``pose_mean``/``pose_std`` or ``"uniform"`` over ``pose_range``. Yaw and
    pitch are drawn uniformly in ``[-out_of_plane, out_of_plane]`` and appear
    as foreshortening of the projected face.
    """

    count: int = 100
    image_size: int = 128
    k: int = 5
    pose_law: str = "gaussian"
    pose_mean: float = 0.0
    pose_std: float = 15.0
    pose_range: tuple[float, float] = (-40.0, 40.0)
    out_of_plane: float = 15.0
    noise: float = 6.0
    seed: int = 0
    id_prefix: str = "s"

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("count must be positive")
        if self.pose_std < 0 or self.noise < 0 or self.out_of_plane < 0:
            raise ValueError("standard deviations and ranges must be non-negative")
        if self.pose_law not in ("gaussian", "uniform"):
            raise ValueError(f"unknown pose law {self.pose_law!r}")
        if self.k not in LAYOUTS:
            raise ValueError(f"k must be one of {sorted(LAYOUTS)}")
        lo, hi = self.pose_range
        if lo > hi:
            raise ValueError("pose_range must be (low, high)")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "pose_range" in d:
            d["pose_range"] = tuple(d["pose_range"])
        return cls(**d)


# part geometry in head-model units: centre, x semi-axis, y semi-axis
_EARS = [((-1.02, -0.1, 0.15), 0.2, 0.38), ((1.02, -0.1, 0.15), 0.2, 0.38)]
_BROWS = [((-0.42, -0.58, -0.7), 0.32, 0.05), ((0.42, -0.58, -0.7), 0.32, 0.05)]
_EYES = [((-0.4, -0.25, -0.8), 0.17, 0.07), ((0.4, -0.25, -0.8), 0.17, 0.07)]
_IRIS = [((-0.4, -0.25, -0.82), 0.06, 0.06), ((0.4, -0.25, -0.82), 0.06, 0.06)]
_NOSE = ((0.0, -0.02, -1.1), 0.09, 0.32)
_NOSTRILS = [((-0.12, 0.36, -1.0), 0.05, 0.035), ((0.12, 0.36, -1.0), 0.05, 0.035)]
_MOUTH = ((0.0, 0.72, -0.72), 0.38, 0.14)
_LIPS = ((0.0, 0.72, -0.74), 0.27, 0.04)
_HEAD_AXES = np.array([1.0, 1.2, 0.9])


def _pose_for(cfg: SynthConfig, rng: np.random.Generator) -> tuple[float, float, float]:
    if cfg.pose_law == "gaussian":
        roll = rng.normal(cfg.pose_mean, cfg.pose_std)
    else:
        roll = rng.uniform(*cfg.pose_range)
    pitch, yaw = rng.uniform(-cfg.out_of_plane, cfg.out_of_plane, size=2)
    return float(pitch), float(yaw), float(roll)


class _Projector:
    def __init__(self, rot, trans, cam: CameraIntrinsics):
        self.rot = rot
        self.trans = np.asarray(trans)
        self.cam = cam

    def __call__(self, pts):
        pc = np.atleast_2d(pts) @ self.rot.T + self.trans
        return np.column_stack([self.cam.focal * pc[:, 0] / pc[:, 2] + self.cam.cx,
                                self.cam.focal * pc[:, 1] / pc[:, 2] + self.cam.cy])

    def ellipse(self, centre, ax, ay):
        c = np.asarray(centre, dtype=np.float64)
        p = self([c, c + (ax, 0, 0), c + (0, ay, 0)])
        m = np.column_stack([p[1] - p[0], p[2] - p[0]])
        return p[0], m @ m.T


def _fill(canvas, xs, ys, centre, cov, value):
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        return
    dx = xs - centre[0]
    dy = ys - centre[1]
    q = inv[0, 0] * dx * dx + (inv[0, 1] + inv[1, 0]) * dx * dy + inv[1, 1] * dy * dy
    canvas[q <= 1.0] = value


def render_face(cfg: SynthConfig, index: int) -> Sample:
    """Render synthetic sample ``index``; a pure function of ``(cfg, index)``."""
    size = cfg.image_size
    if size < MIN_SYNTH_SIZE:
        raise ValueError(f"image_size {size} too small to contain a face (min {MIN_SYNTH_SIZE})")
    rng = np.random.default_rng([cfg.seed, index])
    pitch, yaw, roll = _pose_for(cfg, rng)
    rot = rotation_from_euler(pitch, yaw, roll)
    cam = CameraIntrinsics.for_image(size, size)
    half_width = rng.uniform(0.2, 0.26) * size
    depth = cam.focal / half_width
    centre = size / 2.0 + rng.uniform(-0.06, 0.06, size=2) * size
    trans = ((centre[0] - cam.cx) * depth / cam.focal,
             (centre[1] - cam.cy) * depth / cam.focal, depth)
    proj = _Projector(rot, trans, cam)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    face_val = rng.uniform(110, 200)
    bg_val = rng.uniform(20, 235)
    if abs(bg_val - face_val) < 35:
        bg_val = face_val - 70 if face_val > 140 else face_val + 70
    canvas = np.full((size, size), bg_val)
    for _ in range(3):
        fx, fy = rng.uniform(0.5, 3.0, size=2) * 2 * np.pi / size
        canvas += rng.uniform(5, 15) * np.sin(fx * xs + fy * ys + rng.uniform(0, 2 * np.pi))

    for c, ax, ay in _EARS:
        _fill(canvas, xs, ys, *proj.ellipse(c, ax, ay), face_val - 25)
    # head silhouette: orthographic outline of the rotated ellipsoid, scaled
    outline = rot @ np.diag(_HEAD_AXES ** 2) @ rot.T * (cam.focal / depth) ** 2
    head_centre = proj(np.zeros(3))[0]
    face = np.full((size, size), face_val)
    light = rng.normal(size=2) * 0.25
    face += light[0] * (xs - head_centre[0]) + light[1] * (ys - head_centre[1])
    dx, dy = xs - head_centre[0], ys - head_centre[1]
    inv = np.linalg.inv(outline[:2, :2])
    inside = inv[0, 0] * dx * dx + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy <= 1.0
    canvas[inside] = face[inside]

    sclera = min(face_val + 45, 250)
    for c, ax, ay in _BROWS:
        _fill(canvas, xs, ys, *proj.ellipse(c, ax, ay), rng.uniform(20, 60))
    for c, ax, ay in _EYES:
        _fill(canvas, xs, ys, *proj.ellipse(c, ax, ay), sclera)
    iris_val = rng.uniform(10, 50)
    for c, ax, ay in _IRIS:
        _fill(canvas, xs, ys, *proj.ellipse(c, ax, ay), iris_val)
    _fill(canvas, xs, ys, *proj.ellipse(*_NOSE), min(face_val + 20, 245))
    for c, ax, ay in _NOSTRILS:
        _fill(canvas, xs, ys, *proj.ellipse(c, ax, ay), rng.uniform(15, 45))
    _fill(canvas, xs, ys, *proj.ellipse(*_MOUTH), rng.uniform(50, 90))
    _fill(canvas, xs, ys, *proj.ellipse(*_LIPS), rng.uniform(10, 35))

    if cfg.noise > 0:
        canvas += rng.normal(0.0, cfg.noise, size=canvas.shape)
    image = np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8)

    truth = proj(builtin_points(LAYOUTS[cfg.k]))
    half = np.sqrt(np.diag(outline)[:2])
    lo = head_centre - half
    hi = head_centre + half
    jitter = rng.uniform(-0.05, 0.05, size=4) * 2 * half_width
    lo = np.minimum(lo + jitter[:2], truth.min(axis=0) - 1.0)
    hi = np.maximum(hi + jitter[2:], truth.max(axis=0) + 1.0)
    box = BBox(float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))
    return Sample(image, box, truth, (pitch, yaw, roll), f"{cfg.id_prefix}{index:05d}")


def generate_synthetic(cfg: SynthConfig) -> list[Sample]:
    return [render_face(cfg, i) for i in range(cfg.count)]

