"""Shape-indexed pixel addressing and pixel-difference features.

Three indexing schemes are supported:

``tif``
    triplet interpolation: ``y_i + (alpha * (y_j - y_i) + beta * (y_k - y_i))``
    over three distinct landmarks, which reaches any point of the plane.
``pair``
    two-point interpolation ``y_i + gamma * (y_j - y_i)``, restricted to the
    segment between two landmarks.
``offset``
    closest-landmark offsets ``y_k + L @ offset`` where ``L`` is the scale
    and rotation of the similarity fitted from the mean shape to the
    current shape.

All three are stored in one anchor layout ``(base, j, k, alpha, beta,
offset)`` so that a single kernel evaluates every mode.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .geometry import ShapeError, as_shape, similarity_params

MODES = ("tif", "pair", "offset")
TIF_RANGE = (-0.4, 1.4)
DEFAULT_OFFSET_RADIUS = 0.2


@dataclass(frozen=True)
class TifIndex:
    i: int
    j: int
    k: int
    alpha: float
    beta: float

    def __post_init__(self):
        if len({self.i, self.j, self.k}) != 3:
            raise ValueError("triplet landmarks must be pairwise distinct")


@dataclass(frozen=True)
class PairIndex:
    i: int
    j: int
    gamma: float

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pair landmarks must differ")


@dataclass(frozen=True)
class LocalOffsetIndex:
    k: int
    offset: tuple[float, float]


def _check_range(shape, *idx):
    n = shape.shape[0]
    for v in idx:
        if not 0 <= v < n:
            raise IndexError(f"landmark index {v} out of range for K={n}")


def tif_point(shape, idx: TifIndex) -> np.ndarray:
    s = as_shape(shape, min_points=3)
    _check_range(s, idx.i, idx.j, idx.k)
    yi = s[idx.i]
    return yi + (idx.alpha * (s[idx.j] - yi) + idx.beta * (s[idx.k] - yi))


def pair_point(shape, idx: PairIndex) -> np.ndarray:
    s = as_shape(shape, min_points=2)
    _check_range(s, idx.i, idx.j)
    yi = s[idx.i]
    return yi + idx.gamma * (s[idx.j] - yi)


def offset_point(shape, mean, idx: LocalOffsetIndex) -> np.ndarray:
    s = as_shape(shape, min_points=2)
    m = as_shape(mean, min_points=2)
    if m.shape != s.shape:
        raise ShapeError("mean and shape landmark counts differ")
    _check_range(s, idx.k)
    a, b = similarity_params(m, s[None])[0]
    ox, oy = idx.offset
    return s[idx.k] + np.array([a * ox - b * oy, b * ox + a * oy])


@dataclass(frozen=True, eq=False)
class FeaturePool:
    """Indexed points of one cascade stage plus the difference pairs over them."""

    mode: str
    base: np.ndarray
    idx_j: np.ndarray
    idx_k: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    offsets: np.ndarray
    pairs: np.ndarray

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if len(self.base) == 0:
            raise ValueError("pool needs at least one anchor")
        p = len(self.base)
        pr = np.asarray(self.pairs)
        if pr.ndim != 2 or pr.shape[1] != 2 or np.any(pr[:, 0] == pr[:, 1]):
            raise ValueError("difference pairs must be (a, b) with a != b")
        if np.any(pr < 0) or np.any(pr >= p):
            raise ValueError("difference pair refers to a missing anchor")

    @property
    def n_anchors(self) -> int:
        return len(self.base)

    @property
    def n_features(self) -> int:
        return len(self.pairs)

    @property
    def anchor_arrays(self):
        return (self.base, self.idx_j, self.idx_k, self.alpha, self.beta, self.offsets)

    def anchors(self) -> list:
        """Anchors as typed index records of the pool's mode."""
        out = []
        for n in range(self.n_anchors):
            i, j, k = int(self.base[n]), int(self.idx_j[n]), int(self.idx_k[n])
            if self.mode == "tif":
                out.append(TifIndex(i, j, k, float(self.alpha[n]), float(self.beta[n])))
            elif self.mode == "pair":
                out.append(PairIndex(i, j, float(self.alpha[n])))
            else:
                out.append(LocalOffsetIndex(i, tuple(float(v) for v in self.offsets[n])))
        return out

    def max_landmark(self) -> int:
        return int(max(self.base.max(), self.idx_j.max(), self.idx_k.max()))

    @classmethod
    def from_anchors(cls, mode: str, anchors, pairs) -> "FeaturePool":
        """Build a pool from typed index records (handy for hand-made pools)."""
        n = len(anchors)
        base = np.zeros(n, np.int64)
        j = np.zeros(n, np.int64)
        k = np.zeros(n, np.int64)
        alpha = np.zeros(n)
        beta = np.zeros(n)
        off = np.zeros((n, 2))
        for t, a in enumerate(anchors):
            if mode == "tif":
                base[t], j[t], k[t], alpha[t], beta[t] = a.i, a.j, a.k, a.alpha, a.beta
            elif mode == "pair":
                base[t], j[t], k[t], alpha[t] = a.i, a.j, a.j, a.gamma
            else:
                base[t] = j[t] = k[t] = a.k
                off[t] = a.offset
        return cls(mode, base, j, k, alpha, beta, off, np.asarray(pairs, dtype=np.int64).reshape(-1, 2))


def _difference_pairs(n_anchors: int, count: int, rng: np.random.Generator) -> np.ndarray:
    total = n_anchors * (n_anchors - 1) // 2
    if count > total:
        raise ValueError(f"cannot draw {count} distinct pairs from {n_anchors} anchors")
    seen = set()
    out = []
    while len(out) < count:
        a, b = (int(v) for v in rng.choice(n_anchors, 2, replace=False))
        key = (min(a, b), max(a, b))
        if key in seen:
            continue
        seen.add(key)
        out.append((a, b))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def sample_pool(mode: str, k: int, n_anchors: int, pair_count: int,
                rng: np.random.Generator, radius: float = DEFAULT_OFFSET_RADIUS) -> FeaturePool:
    """Draw a random feature pool for ``k`` landmarks.

    ``tif`` draws three distinct landmarks, picks one of them uniformly as the
    primary point and draws ``alpha, beta ~ U(-0.4, 1.4)``. ``pair`` draws two
    distinct landmarks and ``gamma ~ U(0, 1)``. ``offset`` draws a landmark
    and an offset uniform in the disc of ``radius`` (unit box frame).
    """
    if mode not in MODES:
        raise ValueError(f"unknown feature mode {mode!r}")
    need = {"tif": 3, "pair": 2, "offset": 1}[mode]
    if k < need:
        raise ValueError(f"mode {mode!r} needs at least {need} landmarks, got K={k}")
    if n_anchors < 2:
        raise ValueError("need at least two anchors to form differences")
    base = np.zeros(n_anchors, np.int64)
    j = np.zeros(n_anchors, np.int64)
    kk = np.zeros(n_anchors, np.int64)
    alpha = np.zeros(n_anchors)
    beta = np.zeros(n_anchors)
    off = np.zeros((n_anchors, 2))
    for n in range(n_anchors):
        if mode == "tif":
            trip = rng.choice(k, 3, replace=False)
            primary = int(rng.integers(3))
            rest = [int(v) for t, v in enumerate(trip) if t != primary]
            base[n], j[n], kk[n] = int(trip[primary]), rest[0], rest[1]
            alpha[n], beta[n] = rng.uniform(*TIF_RANGE, size=2)
        elif mode == "pair":
            a, b = rng.choice(k, 2, replace=False)
            base[n], j[n], kk[n] = a, b, b
            alpha[n] = rng.uniform(0.0, 1.0)
        else:
            base[n] = j[n] = kk[n] = int(rng.integers(k))
            r = radius * np.sqrt(rng.uniform())
            theta = rng.uniform(0.0, 2 * np.pi)
            off[n] = (r * np.cos(theta), r * np.sin(theta))
    pairs = _difference_pairs(n_anchors, pair_count, rng)
    return FeaturePool(mode, base, j, kk, alpha, beta, off, pairs)


def similarity_for(pool: FeaturePool, mean, shapes) -> np.ndarray | None:
    if pool.mode != "offset":
        return None
    if mean is None:
        raise ValueError("offset features need the mean shape")
    return similarity_params(np.asarray(mean, dtype=np.float64), shapes)


def extract_batch(bank: kernels.ImageBank, img_idx, shapes, pool: FeaturePool,
                  mean=None, threads: int = 1, backend: str | None = None) -> np.ndarray:
    """Features for many ``(image, shape)`` instances; shapes in pixels, ``(N, K, 2)``."""
    shapes = np.asarray(shapes, dtype=np.float64)
    if shapes.ndim != 3 or shapes.shape[2] != 2:
        raise ShapeError(f"expected (N, K, 2) shapes, got {shapes.shape}")
    if pool.max_landmark() >= shapes.shape[1]:
        raise IndexError("feature pool refers to a landmark beyond K")
    sim = similarity_for(pool, mean, shapes)
    return kernels.indexed_diffs(bank, img_idx, shapes, pool.anchor_arrays, pool.pairs,
                                 sim=sim, threads=threads, backend=backend)


def extract_features(image, shape, mean, pool: FeaturePool, backend: str | None = None) -> np.ndarray:
    """Pixel differences ``I(point_a) - I(point_b)`` for every pool pair."""
    s = as_shape(shape)
    bank = kernels.ImageBank([image])
    return extract_batch(bank, np.zeros(1, np.int64), s[None], pool, mean, backend=backend)[0]
