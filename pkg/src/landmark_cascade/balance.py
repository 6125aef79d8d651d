"""Pose-aware training augmentation.

Every training face gets several initial shapes. With the negatively
correlated scheme the number of initialisations of a sample falls linearly
with the fitted pose density at its significant angle, so rare poses get
more initialisations while the total stays fixed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BBox, denormalize_shape, mean_shape

# pdf values are compared at this relative resolution so that rescaling all
# densities by a constant yields exactly the same plan
_PDF_GRID = 1e9


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianFit:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    def pdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))


def fit_gaussian(angles) -> GaussianFit:
    a = np.asarray(angles, dtype=np.float64).ravel()
    if a.size < 2:
        raise ValueError("need at least two angles to fit a Gaussian")
    sigma = float(np.std(a, ddof=1))
    if not sigma > 0:
        raise ValueError("angles have zero variance")
    return GaussianFit(float(np.mean(a)), sigma)


@dataclass(frozen=True)
class AugmentationPlan:
    counts: tuple[int, ...]
    budget: int
    bounds: tuple[int, int]

    def __post_init__(self):
        lo, hi = self.bounds
        if sum(self.counts) != self.budget:
            raise PlanError("plan counts do not add up to the budget")
        if any(c < lo or c > hi for c in self.counts):
            raise PlanError("plan count outside bounds")

    def __len__(self):
        return len(self.counts)


def uniform_plan(n: int, m: int) -> AugmentationPlan:
    if n <= 0 or m <= 0:
        raise PlanError("n and m must be positive")
    return AugmentationPlan((m,) * n, n * m, (m, m))


def _split_evenly(n: int, budget: int) -> list[int]:
    q, r = divmod(budget, n)
    return [q + 1 if t < r else q for t in range(n)]


def nca_plan(pdf_values, budget: int, m_min: int, m_max: int) -> AugmentationPlan:
    """Negatively correlated augmentation counts under an exact budget.

    The line ``m = a * pdf + b`` is pinned so the densest sample maps to
    ``m_min`` and the sparsest to ``m_max``. Because those two endpoints and
    the total cannot generally all hold, the line is then shifted by a
    common offset (values clamped to the bounds) until it sums to
    ``budget``, and the result is integerised by largest remainder.
    Remainder ties go to the lower-density sample, which keeps counts
    non-increasing in density.
    """
    pdf = np.asarray(pdf_values, dtype=np.float64).ravel()
    n = pdf.size
    if n == 0:
        raise PlanError("no samples to plan for")
    if m_min > m_max or m_min < 0:
        raise PlanError(f"invalid bounds ({m_min}, {m_max})")
    if not np.all(np.isfinite(pdf)) or np.any(pdf < 0):
        raise PlanError("pdf values must be finite and non-negative")
    if budget < n * m_min or budget > n * m_max:
        raise PlanError(f"budget {budget} infeasible for {n} samples within [{m_min}, {m_max}]")

    lo, hi = pdf.min(), pdf.max()
    if hi - lo <= 0 or m_min == m_max:
        return AugmentationPlan(tuple(_split_evenly(n, budget)), budget, (m_min, m_max))

    t = np.round((pdf - lo) / (hi - lo) * _PDF_GRID) / _PDF_GRID
    raw = m_max - (m_max - m_min) * t

    def total(shift):
        return float(np.clip(raw + shift, m_min, m_max).sum())

    # total(shift) is continuous and non-decreasing; bisect for the budget
    left, right = float(m_min - m_max), float(m_max - m_min)
    for _ in range(200):
        mid = 0.5 * (left + right)
        if total(mid) < budget:
            left = mid
        else:
            right = mid
    vals = np.clip(raw + right, m_min, m_max)

    counts = np.floor(vals).astype(np.int64)
    rem = vals - counts
    # larger remainder first, then lower raw density, then index; raw pdf
    # (not the gridded t) keeps counts monotone when t values collide
    order = np.lexsort((np.arange(n), pdf, -rem))
    deficit = budget - int(counts.sum())
    if deficit > 0:
        for idx in order:
            if deficit == 0:
                break
            if counts[idx] < m_max:
                counts[idx] += 1
                deficit -= 1
    elif deficit < 0:
        for idx in order[::-1]:
            if deficit == 0:
                break
            if counts[idx] > m_min:
                counts[idx] -= 1
                deficit += 1
    if deficit != 0:
        raise PlanError("could not meet the budget within bounds")
    return AugmentationPlan(tuple(int(c) for c in counts), int(budget), (m_min, m_max))


@dataclass(frozen=True)
class InitConfig:
    """Monte Carlo initialisation: a donor shape jittered in shift and scale.

    ``shift`` is the maximum translation as a fraction of the box size and
    ``scale`` the range of the uniform scale factor applied about the donor
    centroid. ``source`` is ``"resample"`` (random training shape) or
    ``"mean"``.
    """

    shift: float = 0.05
    scale: tuple[float, float] = (0.9, 1.1)
    source: str = "resample"

    def __post_init__(self):
        if self.source not in ("resample", "mean"):
            raise ValueError(f"unknown init source {self.source!r}")
        if not (math.isfinite(self.shift) and all(math.isfinite(s) for s in self.scale)):
            raise ValueError("jitter ranges must be finite")
        if self.shift < 0 or self.scale[0] <= 0 or self.scale[0] > self.scale[1]:
            raise ValueError("invalid jitter ranges")

    def to_dict(self) -> dict:
        return {"shift": self.shift, "scale": list(self.scale), "source": self.source}

    @classmethod
    def from_dict(cls, d) -> "InitConfig":
        return cls(float(d["shift"]), tuple(float(v) for v in d["scale"]), d["source"])


def jitter_unit_shapes(donors: np.ndarray, count: int, cfg: InitConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """``count`` initial shapes in the unit box frame, ``(count, K, 2)``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    donors = np.asarray(donors, dtype=np.float64)
    if donors.ndim != 3 or len(donors) == 0:
        raise ValueError("need at least one donor shape")
    if cfg.source == "mean":
        picks = np.broadcast_to(donors.mean(axis=0), (count,) + donors.shape[1:])
    else:
        picks = donors[rng.integers(len(donors), size=count)]
    scales = rng.uniform(cfg.scale[0], cfg.scale[1], size=count)
    shifts = rng.uniform(-cfg.shift, cfg.shift, size=(count, 2))
    centroid = picks.mean(axis=1, keepdims=True)
    return centroid + scales[:, None, None] * (picks - centroid) + shifts[:, None, :]


def generate_inits(box: BBox, donors, count: int, cfg: InitConfig,
                   rng: np.random.Generator) -> list[np.ndarray]:
    """Initial shapes placed in ``box`` (image pixels)."""
    donors = list(donors)
    if not donors:
        raise ValueError("donor shapes required")
    if cfg.source == "mean":
        donors = [mean_shape(donors)]
    unit = jitter_unit_shapes(np.stack(donors), count, cfg, rng)
    return [denormalize_shape(s, box) for s in unit]
