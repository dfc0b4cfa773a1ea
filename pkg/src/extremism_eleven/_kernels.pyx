# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: chunk-vs-item cosine aggregation and LOESS grid fitting.

The numpy twin lives in ``_fallback.py`` and must keep the same signatures.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef enum:
    _BLOCK = 8


cdef inline double _sqnorm(const float* a, Py_ssize_t d) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(d):
        s += <double>a[i] * <double>a[i]
    return s


def chunk_item_mean(const float[:, ::1] chunks, const float[:, ::1] items,
                    const long long[::1] offsets, const double[::1] weights=None):
    """Mean cosine of each post's chunks against every item.

    ``offsets`` has length n_posts + 1; post ``i`` owns chunk rows
    ``offsets[i]:offsets[i+1]``. With ``weights`` the mean is weighted per chunk.
    Each (chunk, item) dot product is summed in index order, so a row's
    result does not depend on which other posts share the call.
    """
    cdef Py_ssize_t n_chunks = chunks.shape[0], d = chunks.shape[1]
    cdef Py_ssize_t p = items.shape[0]
    cdef Py_ssize_t n_posts = offsets.shape[0] - 1
    if items.shape[1] != d:
        raise ValueError(f"dimension mismatch: chunks {d}, items {items.shape[1]}")
    if d < 1 or p < 1:
        raise ValueError("empty chunk or item matrix")
    if n_posts < 0 or offsets[n_posts] != n_chunks:
        raise ValueError("offsets do not cover the chunk rows")

    out_arr = np.zeros((n_posts, p), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    items_t_arr = np.ascontiguousarray(np.asarray(items, dtype=np.float64).T)
    cdef double[:, ::1] items_t = items_t_arr
    item_norm_arr = np.empty(p, dtype=np.float64)
    cdef double[::1] item_norm = item_norm_arr
    acc_arr = np.empty((_BLOCK, p), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    owner_arr = np.empty(n_chunks, dtype=np.int64)
    cdef long long[::1] owner = owner_arr
    wsum_arr = np.zeros(n_posts, dtype=np.float64)
    cdef double[::1] wsum = wsum_arr
    cdef double cnorm[_BLOCK]
    cdef double cval[_BLOCK]
    cdef Py_ssize_t i, j, c, c0, nb, b, t
    cdef double cosv, w, ci
    cdef bint weighted = weights is not None
    cdef const double* row
    cdef double* arow

    for j in range(p):
        item_norm[j] = sqrt(_sqnorm(&items[j, 0], d))
        if item_norm[j] == 0.0:
            raise ValueError(f"item vector {j} has zero norm")
    for i in range(n_posts):
        if offsets[i + 1] <= offsets[i]:
            raise ValueError(f"post {i} has no chunks")
        for c in range(offsets[i], offsets[i + 1]):
            owner[c] = i

    with nogil:
        c0 = 0
        while c0 < n_chunks:
            # a block of chunks shares each pass over the item matrix
            nb = n_chunks - c0
            if nb > _BLOCK:
                nb = _BLOCK
            for b in range(nb):
                cnorm[b] = sqrt(_sqnorm(&chunks[c0 + b, 0], d))
                if cnorm[b] == 0.0:
                    with gil:
                        raise ValueError(f"chunk {c0 + b} has zero norm")
                for j in range(p):
                    acc[b, j] = 0.0
            for t in range(d):
                row = &items_t[t, 0]
                for b in range(nb):
                    ci = <double>chunks[c0 + b, t]
                    arow = &acc[b, 0]
                    for j in range(p):
                        arow[j] += ci * row[j]
            for b in range(nb):
                c = c0 + b
                i = owner[c]
                w = weights[c] if weighted else 1.0
                wsum[i] += w
                for j in range(p):
                    cosv = acc[b, j] / (cnorm[b] * item_norm[j])
                    if cosv > 1.0:
                        cosv = 1.0
                    elif cosv < -1.0:
                        cosv = -1.0
                    out[i, j] += w * cosv
            c0 += nb
        for i in range(n_posts):
            for j in range(p):
                out[i, j] /= wsum[i]
    return out_arr


cdef Py_ssize_t _window_start(const double[::1] x, double g, Py_ssize_t k) noexcept nogil:
    # leftmost start of the k-nearest contiguous window in sorted x
    cdef Py_ssize_t lo = 0, hi = x.shape[0] - k, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if g - x[mid] > x[mid + k] - g:
            lo = mid + 1
        else:
            hi = mid
    return lo


cdef bint _solve(double* a, double* b, int m) noexcept nogil:
    # Gaussian elimination with partial pivoting on an m x m row-major system.
    cdef int col, r, piv, cc
    cdef double best, f, tmp, scale = 0.0
    for r in range(m * m):
        if fabs(a[r]) > scale:
            scale = fabs(a[r])
    if scale == 0.0:
        return False
    for col in range(m):
        piv = col
        best = fabs(a[col * m + col])
        for r in range(col + 1, m):
            if fabs(a[r * m + col]) > best:
                best = fabs(a[r * m + col])
                piv = r
        if best <= 1e-12 * scale:
            return False
        if piv != col:
            for cc in range(m):
                tmp = a[col * m + cc]
                a[col * m + cc] = a[piv * m + cc]
                a[piv * m + cc] = tmp
            tmp = b[col]
            b[col] = b[piv]
            b[piv] = tmp
        for r in range(col + 1, m):
            f = a[r * m + col] / a[col * m + col]
            for cc in range(col, m):
                a[r * m + cc] -= f * a[col * m + cc]
            b[r] -= f * b[col]
    for r in range(m - 1, -1, -1):
        tmp = b[r]
        for cc in range(r + 1, m):
            tmp -= a[r * m + cc] * b[cc]
        b[r] = tmp / a[r * m + r]
    return True


def loess_grid(const double[::1] x, const double[::1] y, const double[::1] grid,
               Py_ssize_t k, int degree):
    """Local polynomial fits at each grid point over the k nearest x values.

    ``x`` must be sorted ascending. Returns ``(fitted, degenerate)`` where
    ``degenerate[g]`` marks grid points that fell back to a weighted mean.
    """
    cdef Py_ssize_t n = x.shape[0], ng = grid.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y lengths differ")
    if k < 1 or k > n:
        raise ValueError(f"neighbourhood size {k} outside [1, {n}]")
    if degree < 0 or degree > 2:
        raise ValueError("degree must be 0, 1 or 2")
    fitted_arr = np.empty(ng, dtype=np.float64)
    degen_arr = np.zeros(ng, dtype=np.bool_)
    cdef double[::1] fitted = fitted_arr
    cdef cnp.npy_bool[::1] degen = degen_arr
    cdef Py_ssize_t gi, i, lo
    cdef int m = degree + 1, r, c
    cdef double g, dmax, d, u, w, t, sw, swy
    cdef double a[9]
    cdef double b[3]
    cdef double pw[5]

    with nogil:
        for gi in range(ng):
            g = grid[gi]
            lo = _window_start(x, g, k)
            dmax = g - x[lo]
            if x[lo + k - 1] - g > dmax:
                dmax = x[lo + k - 1] - g
            for r in range(9):
                a[r] = 0.0
            for r in range(3):
                b[r] = 0.0
            sw = 0.0
            swy = 0.0
            for i in range(lo, lo + k):
                d = fabs(x[i] - g)
                if dmax > 0.0:
                    u = d / dmax
                    if u >= 1.0:
                        w = 0.0
                    else:
                        u = 1.0 - u * u * u
                        w = u * u * u
                else:
                    w = 1.0
                sw += w
                swy += w * y[i]
                t = x[i] - g
                pw[0] = 1.0
                for r in range(1, 2 * m - 1):
                    pw[r] = pw[r - 1] * t
                for r in range(m):
                    b[r] += w * pw[r] * y[i]
                    for c in range(m):
                        a[r * m + c] += w * pw[r + c]
            if sw <= 0.0:
                # every neighbour sits at the window edge: plain mean
                sw = 0.0
                swy = 0.0
                for i in range(lo, lo + k):
                    sw += 1.0
                    swy += y[i]
                fitted[gi] = swy / sw
                degen[gi] = True
            elif _solve(a, b, m):
                fitted[gi] = b[0]
            else:
                fitted[gi] = swy / sw
                degen[gi] = True
    return fitted_arr, degen_arr
