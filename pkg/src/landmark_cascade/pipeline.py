"""Glue between datasets, head pose and augmentation planning."""
from __future__ import annotations

import re

import numpy as np

from .balance import AugmentationPlan, GaussianFit, fit_gaussian, nca_plan, uniform_plan
from .headpose import CameraIntrinsics, Model3D, builtin_model_for_k, posit, significant_angle

_NCA = re.compile(r"^nca:(\d+),(\d+),(\d+)(N?)$", re.IGNORECASE)
_UNIFORM = re.compile(r"^uniform:(\d+)$", re.IGNORECASE)


def sample_poses(samples, model3d: Model3D | None = None, focal_factor: float = 1.5):
    """``(pitch, yaw, roll)`` per sample: stored pose metadata, else POSIT on the truth."""
    poses = []
    for s in samples:
        if s.pose is not None:
            poses.append(tuple(float(v) for v in s.pose))
            continue
        if s.truth is None:
            raise ValueError(f"sample {s.id!r} has neither pose nor landmarks")
        model = model3d or builtin_model_for_k(len(s.truth))
        h, w = s.image.shape
        est = posit(s.truth, model, CameraIntrinsics.for_image(w, h, focal_factor))
        poses.append(est.angles)
    return poses


def pose_densities(samples, model3d: Model3D | None = None,
                   focal_factor: float = 1.5) -> tuple[np.ndarray, np.ndarray, GaussianFit | None]:
    """Significant angles, their fitted Gaussian density values and the fit.

    When every sample shares one significant angle no Gaussian can be
    fitted; all densities are then equal (fit is ``None``), which makes
    the plan an even split.
    """
    angles = np.array([significant_angle(p) for p in sample_poses(samples, model3d, focal_factor)])
    if len(angles) > 1 and np.ptp(angles) == 0:
        return angles, np.ones_like(angles), None
    fit = fit_gaussian(angles)
    return angles, fit.pdf(angles), fit


def parse_aug_spec(spec: str, n: int) -> tuple[str, tuple[int, ...]]:
    """``uniform:M`` or ``nca:MIN,MAX,BUDGET`` where BUDGET may be written ``20N``."""
    s = spec.strip()
    m = _UNIFORM.match(s)
    if m:
        return "uniform", (int(m.group(1)),)
    m = _NCA.match(s)
    if m:
        budget = int(m.group(3)) * (n if m.group(4) else 1)
        return "nca", (int(m.group(1)), int(m.group(2)), budget)
    raise ValueError(f"bad augmentation spec {spec!r}; use uniform:M or nca:MIN,MAX,BUDGET[N]")


def make_plan(spec: str, samples, model3d: Model3D | None = None,
              focal_factor: float = 1.5) -> tuple[AugmentationPlan, np.ndarray | None]:
    kind, args = parse_aug_spec(spec, len(samples))
    if kind == "uniform":
        return uniform_plan(len(samples), args[0]), None
    _, pdf, _ = pose_densities(samples, model3d, focal_factor)
    m_min, m_max, budget = args
    return nca_plan(pdf, budget, m_min, m_max), pdf
