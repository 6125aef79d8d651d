"""Landmark localisation error metrics.

Success means a normalised mean error strictly below the threshold; the
CED uses the same strict comparison so ``slr(e, t) == ced(e, [t])[0]``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, as_shape

DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True)
class Normalizer:
    """``interocular`` (distance between two landmarks of the truth) or ``face_size``."""

    mode: str = "face_size"
    left: int = 0
    right: int = 1

    def __post_init__(self):
        if self.mode not in ("interocular", "face_size"):
            raise ValueError(f"unknown normalizer {self.mode!r}")
        if self.mode == "interocular" and (self.left == self.right or min(self.left, self.right) < 0):
            raise ValueError("interocular indices must be distinct and non-negative")

    @classmethod
    def parse(cls, spec: str) -> "Normalizer":
        """``"face"`` / ``"face_size"`` or ``"iod:LEFT,RIGHT"``."""
        spec = spec.strip().lower()
        if spec in ("face", "face_size"):
            return cls("face_size")
        if spec.startswith("iod:"):
            left, right = (int(v) for v in spec[4:].split(","))
            return cls("interocular", left, right)
        raise ValueError(f"bad normalizer spec {spec!r}")

    def describe(self) -> str:
        return "face_size" if self.mode == "face_size" else f"iod:{self.left},{self.right}"

    def value(self, truth: np.ndarray, box: BBox) -> float:
        if self.mode == "face_size":
            return box.size
        if max(self.left, self.right) >= len(truth):
            raise IndexError("interocular index beyond K")
        return float(np.linalg.norm(truth[self.left] - truth[self.right]))


def nme(pred, truth, box: BBox, norm: Normalizer) -> float:
    p = as_shape(pred)
    t = as_shape(truth)
    if p.shape != t.shape:
        raise ValueError(f"landmark count mismatch: {p.shape[0]} vs {t.shape[0]}")
    scale = norm.value(t, box)
    if not scale > 0:
        raise ZeroDivisionError("normaliser is zero")
    return float(np.linalg.norm(p - t, axis=1).mean() / scale)


def slr(errors, threshold: float = DEFAULT_THRESHOLD) -> float:
    e = np.asarray(errors, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no errors given")
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return float(np.mean(e < threshold))


def ced(errors, grid) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.size == 0:
        return np.zeros(0)
    if np.any(np.diff(g) <= 0):
        raise ValueError("CED grid must be strictly increasing")
    e = np.sort(np.asarray(errors, dtype=np.float64))
    if e.size == 0:
        return np.zeros(g.size)
    return np.searchsorted(e, g, side="left") / e.size


def sorted_errors(errors) -> np.ndarray:
    return np.sort(np.asarray(errors, dtype=np.float64))


def failure_histogram(errors, poses, bin_edges, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Failures (error > threshold) per pose-angle bin.

    Bins are ``[edge_i, edge_i+1)``; angles outside the edges are counted in
    the outermost bins so the counts always add up to the failure total.
    """
    e = np.asarray(errors, dtype=np.float64)
    a = np.asarray(poses, dtype=np.float64)
    edges = np.asarray(bin_edges, dtype=np.float64)
    if e.shape != a.shape:
        raise ValueError("errors and poses must be aligned")
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("need at least two strictly increasing bin edges")
    fails = a[e > threshold]
    idx = np.clip(np.searchsorted(edges, fails, side="right") - 1, 0, edges.size - 2)
    return np.bincount(idx, minlength=edges.size - 1)


@dataclass
class EvalReport:
    ids: list[str]
    errors: np.ndarray
    poses: list[float | None]
    missing: list[bool]
    threshold: float = DEFAULT_THRESHOLD
    grid: np.ndarray = field(default_factory=lambda: np.round(np.arange(1, 51) * 0.01, 2))

    @property
    def mean_nme(self) -> float:
        ok = np.asarray([not m for m in self.missing])
        return float(self.errors[ok].mean()) if ok.any() else math.nan

    @property
    def slr(self) -> float:
        return slr(self.errors, self.threshold)

    @property
    def ced(self) -> np.ndarray:
        return ced(self.errors, self.grid)

    def write(self, out_dir, config: dict | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "nme", "pose", "success", "error"])
            for sid, err, pose, miss in zip(self.ids, self.errors, self.poses, self.missing):
                w.writerow([sid, "" if miss else f"{err:.8f}",
                            "" if pose is None else f"{pose:.4f}",
                            int(err < self.threshold), "missing_prediction" if miss else ""])
        with open(out / "ced.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fraction"])
            for t, f in zip(self.grid, self.ced):
                w.writerow([f"{t:.4f}", f"{f:.6f}"])
        summary = {
            "count": len(self.ids),
            "missing": int(sum(self.missing)),
            "mean_nme": self.mean_nme,
            "slr": self.slr,
            "threshold": self.threshold,
            "config": config or {},
        }
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
