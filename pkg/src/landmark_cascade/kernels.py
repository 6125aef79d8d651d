"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``LANDMARK_CASCADE_BACKEND=python`` to force the
fallback. Both backends return bit-identical results.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_CHUNK = 2048


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def _default_backend() -> str:
    want = os.environ.get("LANDMARK_CASCADE_BACKEND", "").strip().lower()
    if want == "python" or _ckernels is None:
        return "python"
    return "cython"


BACKEND = _default_backend()


def _impl(backend: str | None):
    name = backend or BACKEND
    if name == "cython":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not available")
        return _ckernels
    if name == "python":
        return _pykernels
    raise ValueError(f"unknown backend {name!r}")


class ImageBank:
    """Many grayscale images packed into one flat uint8 buffer."""

    def __init__(self, images):
        images = [np.ascontiguousarray(im, dtype=np.uint8) for im in images]
        if not images:
            raise ValueError("image bank needs at least one image")
        self.heights = np.array([im.shape[0] for im in images], dtype=np.int64)
        self.widths = np.array([im.shape[1] for im in images], dtype=np.int64)
        sizes = self.heights * self.widths
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.flat = np.concatenate([im.ravel() for im in images])

    def __len__(self):
        return len(self.widths)


def indexed_diffs(bank: ImageBank, img_idx, shapes, anchors, pairs, sim=None,
                  threads: int = 1, backend: str | None = None) -> np.ndarray:
    """Pixel-difference features for ``N`` shape instances.

    ``anchors`` is a tuple ``(base, j, k, alpha, beta, offsets)`` describing
    every indexed point as
    ``y_base + (alpha*(y_j - y_base) + beta*(y_k - y_base)) + L_n @ offset``
    where ``L_n`` is the per-instance scaled rotation ``[[a, -b], [b, a]]``
    given by ``sim[n] = (a, b)``. Returns an ``(N, M)`` int16 array.
    """
    impl = _impl(backend)
    shapes = np.ascontiguousarray(shapes, dtype=np.float64)
    n = shapes.shape[0]
    img_idx = np.ascontiguousarray(img_idx, dtype=np.int64)
    base, idx_j, idx_k, alpha, beta, off = anchors
    args = (
        np.ascontiguousarray(base, dtype=np.int64),
        np.ascontiguousarray(idx_j, dtype=np.int64),
        np.ascontiguousarray(idx_k, dtype=np.int64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        np.ascontiguousarray(beta, dtype=np.float64),
        np.ascontiguousarray(off, dtype=np.float64).reshape(-1, 2),
    )
    if sim is None:
        sim = np.zeros((n, 2))
    sim = np.ascontiguousarray(sim, dtype=np.float64)
    pairs = np.ascontiguousarray(pairs, dtype=np.int64).reshape(-1, 2)

    def run(lo, hi):
        return impl.indexed_diffs(bank.flat, bank.offsets, bank.widths, bank.heights,
                                  img_idx[lo:hi], shapes[lo:hi], *args, sim[lo:hi], pairs)

    bounds = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]
    if not bounds:
        return np.zeros((0, len(pairs)), dtype=np.int16)
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda b: run(*b), bounds))
    else:
        parts = [run(lo, hi) for lo, hi in bounds]
    return np.concatenate(parts, axis=0)


def fern_bins(features, slots, thresholds, backend: str | None = None) -> np.ndarray:
    impl = _impl(backend)
    return impl.fern_bins(np.ascontiguousarray(features, dtype=np.int16),
                          np.ascontiguousarray(slots, dtype=np.int64),
                          np.ascontiguousarray(thresholds, dtype=np.int64))


def bin_sums(bins, residuals, nbins: int, backend: str | None = None):
    impl = _impl(backend)
    return impl.bin_sums(np.ascontiguousarray(bins, dtype=np.int64),
                         np.ascontiguousarray(residuals, dtype=np.float64), int(nbins))
