# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: shape-indexed pixel differences and fern binning."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def indexed_diffs(const cnp.uint8_t[::1] flat,
                  const cnp.int64_t[::1] offsets,
                  const cnp.int64_t[::1] widths,
                  const cnp.int64_t[::1] heights,
                  const cnp.int64_t[::1] img_idx,
                  const double[:, :, ::1] shapes,
                  const cnp.int64_t[::1] base,
                  const cnp.int64_t[::1] idx_j,
                  const cnp.int64_t[::1] idx_k,
                  const double[::1] alpha,
                  const double[::1] beta,
                  const double[:, ::1] off,
                  const double[:, ::1] sim,
                  const cnp.int64_t[:, ::1] pairs):
    cdef Py_ssize_t n_inst = shapes.shape[0]
    cdef Py_ssize_t n_pts = base.shape[0]
    cdef Py_ssize_t n_pairs = pairs.shape[0]
    out_arr = np.empty((n_inst, n_pairs), dtype=np.int16)
    cdef cnp.int16_t[:, ::1] out = out_arr
    vals_arr = np.empty(n_pts, dtype=np.int16)
    cdef cnp.int16_t[::1] vals = vals_arr
    cdef Py_ssize_t n, p, m, i, j, k
    cdef cnp.int64_t img, w, h, xi, yi, start
    cdef double x, y, a, b, six, siy

    with nogil:
        for n in range(n_inst):
            img = img_idx[n]
            w = widths[img]
            h = heights[img]
            start = offsets[img]
            a = sim[n, 0]
            b = sim[n, 1]
            for p in range(n_pts):
                i = base[p]
                j = idx_j[p]
                k = idx_k[p]
                six = shapes[n, i, 0]
                siy = shapes[n, i, 1]
                x = (six + (alpha[p] * (shapes[n, j, 0] - six)
                            + beta[p] * (shapes[n, k, 0] - six))) \
                    + (a * off[p, 0] - b * off[p, 1])
                y = (siy + (alpha[p] * (shapes[n, j, 1] - siy)
                            + beta[p] * (shapes[n, k, 1] - siy))) \
                    + (b * off[p, 0] + a * off[p, 1])
                x = floor(x + 0.5)
                y = floor(y + 0.5)
                if x < 0:
                    xi = 0
                elif x > w - 1:
                    xi = w - 1
                else:
                    xi = <cnp.int64_t>x
                if y < 0:
                    yi = 0
                elif y > h - 1:
                    yi = h - 1
                else:
                    yi = <cnp.int64_t>y
                vals[p] = flat[start + yi * w + xi]
            for m in range(n_pairs):
                out[n, m] = vals[pairs[m, 0]] - vals[pairs[m, 1]]
    return out_arr


def fern_bins(const cnp.int16_t[:, ::1] features,
              const cnp.int64_t[::1] slots,
              const cnp.int64_t[::1] thresholds):
    cdef Py_ssize_t n_rows = features.shape[0]
    cdef Py_ssize_t depth = slots.shape[0]
    out_arr = np.empty(n_rows, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef Py_ssize_t r, f
    cdef cnp.int64_t idx
    with nogil:
        for r in range(n_rows):
            idx = 0
            for f in range(depth):
                if features[r, slots[f]] >= thresholds[f]:
                    idx |= (<cnp.int64_t>1) << f
            out[r] = idx
    return out_arr


def bin_sums(const cnp.int64_t[::1] bins, const double[:, ::1] residuals,
             Py_ssize_t nbins):
    cdef Py_ssize_t n_rows = residuals.shape[0]
    cdef Py_ssize_t dim = residuals.shape[1]
    sums_arr = np.zeros((nbins, dim), dtype=np.float64)
    counts_arr = np.zeros(nbins, dtype=np.int64)
    cdef double[:, ::1] sums = sums_arr
    cdef cnp.int64_t[::1] counts = counts_arr
    cdef Py_ssize_t r, d
    cdef cnp.int64_t bn
    with nogil:
        for r in range(n_rows):
            bn = bins[r]
            counts[bn] += 1
            for d in range(dim):
                sums[bn, d] += residuals[r, d]
    return sums_arr, counts_arr
