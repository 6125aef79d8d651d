"""Pure-Python (numpy) implementations of the hot kernels.

Arithmetic is ordered exactly as in ``_ckernels.pyx`` so both backends give
bit-identical results.
"""
import numpy as np


def indexed_diffs(flat, offsets, widths, heights, img_idx, shapes,
                  base, idx_j, idx_k, alpha, beta, off, sim, pairs):
    si = shapes[:, base, :]
    vj = shapes[:, idx_j, :] - si
    vk = shapes[:, idx_k, :] - si
    a = sim[:, 0:1]
    b = sim[:, 1:2]
    ox = off[:, 0]
    oy = off[:, 1]
    x = (si[:, :, 0] + (alpha * vj[:, :, 0] + beta * vk[:, :, 0])) + (a * ox - b * oy)
    y = (si[:, :, 1] + (alpha * vj[:, :, 1] + beta * vk[:, :, 1])) + (b * ox + a * oy)

    w = widths[img_idx][:, None]
    h = heights[img_idx][:, None]
    xi = np.clip(np.floor(x + 0.5), 0, w - 1).astype(np.int64)
    yi = np.clip(np.floor(y + 0.5), 0, h - 1).astype(np.int64)
    vals = flat[offsets[img_idx][:, None] + yi * w + xi].astype(np.int16)
    return vals[:, pairs[:, 0]] - vals[:, pairs[:, 1]]


def fern_bins(features, slots, thresholds):
    bits = features[:, slots] >= thresholds
    weights = np.left_shift(1, np.arange(len(slots), dtype=np.int64))
    return bits.astype(np.int64) @ weights


def bin_sums(bins, residuals, nbins):
    counts = np.bincount(bins, minlength=nbins).astype(np.int64)
    sums = np.empty((nbins, residuals.shape[1]), dtype=np.float64)
    for d in range(residuals.shape[1]):
        sums[:, d] = np.bincount(bins, weights=residuals[:, d], minlength=nbins)
    return sums, counts
