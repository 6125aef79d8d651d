"""Shapes, face boxes and 2D similarity transforms.

A shape is a ``(K, 2)`` float64 array of ``(x, y)`` landmark coordinates.
Landmark order carries meaning and is never permuted by anything in this
package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERATE_NORM = 1e-12


class ShapeError(ValueError):
    """Raised for malformed or degenerate shapes."""


def as_shape(points, min_points: int = 1) -> np.ndarray:
    """Validate ``points`` and return them as a ``(K, 2)`` float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ShapeError(f"shape must be (K, 2), got {arr.shape}")
    if arr.shape[0] < min_points:
        raise ShapeError(f"shape needs at least {min_points} points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("shape contains non-finite coordinates")
    return arr


@dataclass(frozen=True)
class BBox:
    """Axis-aligned face box; ``(x, y)`` is the top-left corner in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive size, got w={self.w} h={self.h}")

    @property
    def size(self) -> float:
        """Geometric-mean side length, ``sqrt(w * h)``."""
        return math.sqrt(self.w * self.h)

    def as_list(self) -> list[float]:
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    @classmethod
    def from_seq(cls, seq) -> "BBox":
        x, y, w, h = (float(v) for v in seq)
        return cls(x, y, w, h)


def normalize_shape(shape, box: BBox) -> np.ndarray:
    """Map image-pixel landmarks into the unit frame of ``box``."""
    s = as_shape(shape)
    out = np.empty_like(s)
    out[:, 0] = (s[:, 0] - box.x) / box.w
    out[:, 1] = (s[:, 1] - box.y) / box.h
    return out


def denormalize_shape(shape, box: BBox) -> np.ndarray:
    """Inverse of :func:`normalize_shape`."""
    s = as_shape(shape)
    out = np.empty_like(s)
    out[:, 0] = s[:, 0] * box.w + box.x
    out[:, 1] = s[:, 1] * box.h + box.y
    return out


def mean_shape(shapes) -> np.ndarray:
    """Coordinate-wise mean of equally sized shapes."""
    shapes = list(shapes)
    if not shapes:
        raise ShapeError("mean of an empty shape sequence")
    arrs = [as_shape(s) for s in shapes]
    k = arrs[0].shape[0]
    for a in arrs:
        if a.shape[0] != k:
            raise ShapeError(f"landmark count mismatch: {a.shape[0]} vs {k}")
    return np.mean(np.stack(arrs), axis=0)


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * R(rotation) @ p + translation``."""

    scale: float
    rotation: float
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")

    @property
    def linear(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.linear.T + np.asarray(self.translation)

    def apply_linear(self, vectors) -> np.ndarray:
        """Scale and rotate only, for offsets rather than positions."""
        return np.asarray(vectors, dtype=np.float64) @ self.linear.T

    def inverse(self) -> "SimilarityTransform":
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        tx, ty = self.translation
        return SimilarityTransform(
            inv_scale,
            -self.rotation,
            (-inv_scale * (c * tx - s * ty), -inv_scale * (s * tx + c * ty)),
        )


def similarity_params(reference: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Batched least-squares similarity from ``reference`` to each target.

    Parameters
    ----------
    reference : (K, 2) array
    targets : (N, K, 2) array

    Returns
    -------
    (N, 2) array of ``(a, b)`` with the linear part ``[[a, -b], [b, a]]``,
    i.e. ``a = scale * cos(rot)`` and ``b = scale * sin(rot)``.
    """
    ref = reference - reference.mean(axis=0)
    denom = float(np.sum(ref * ref))
    if denom < DEGENERATE_NORM:
        raise ShapeError("degenerate reference shape (all points coincide)")
    tgt = targets - targets.mean(axis=1, keepdims=True)
    a = np.einsum("kd,nkd->n", ref, tgt) / denom
    b = (np.einsum("k,nk->n", ref[:, 0], tgt[:, :, 1])
         - np.einsum("k,nk->n", ref[:, 1], tgt[:, :, 0])) / denom
    return np.stack([a, b], axis=1)


def similarity_fit(reference, target) -> SimilarityTransform:
    """Least-squares similarity transform mapping ``reference`` onto ``target``.

    Closed form for 2D: centre both point sets, then the optimal linear
    part is ``[[a, -b], [b, a]]`` with ``a = <r, t> / |r|^2`` and
    ``b = <r x t> / |r|^2``.
    """
    ref = as_shape(reference, min_points=2)
    tgt = as_shape(target, min_points=2)
    if ref.shape != tgt.shape:
        raise ShapeError(f"landmark count mismatch: {ref.shape[0]} vs {tgt.shape[0]}")
    a, b = similarity_params(ref, tgt[None])[0]
    scale = math.hypot(a, b)
    if scale <= 0:
        raise ShapeError("target collapses to a point; no valid similarity")
    rotation = math.atan2(b, a)
    lin = np.array([[a, -b], [b, a]])
    t = tgt.mean(axis=0) - lin @ ref.mean(axis=0)
    return SimilarityTransform(scale, rotation, (float(t[0]), float(t[1])))
