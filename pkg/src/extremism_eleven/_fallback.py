"""Pure numpy versions of the compiled kernels (same signatures as ``_kernels``)."""

from __future__ import annotations

import numpy as np


def chunk_item_mean(chunks, items, offsets, weights=None):
    chunks = np.asarray(chunks, dtype=np.float32)
    items64 = np.asarray(items, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.int64)
    if items64.shape[1] != chunks.shape[1]:
        raise ValueError(
            f"dimension mismatch: chunks {chunks.shape[1]}, items {items64.shape[1]}"
        )
    n_posts = offsets.shape[0] - 1
    if n_posts < 0 or offsets[-1] != chunks.shape[0]:
        raise ValueError("offsets do not cover the chunk rows")
    item_norm = np.sqrt(np.einsum("ij,ij->i", items64, items64))
    if np.any(item_norm == 0.0):
        raise ValueError(f"item vector {int(np.argmin(item_norm))} has zero norm")
    out = np.zeros((n_posts, items64.shape[0]))
    for i in range(n_posts):
        lo, hi = int(offsets[i]), int(offsets[i + 1])
        if hi <= lo:
            raise ValueError(f"post {i} has no chunks")
        wsum = 0.0
        for c in range(lo, hi):
            # one matrix-vector product per chunk keeps each row independent of batching
            v = chunks[c].astype(np.float64)
            cn = np.sqrt(v @ v)
            if cn == 0.0:
                raise ValueError(f"chunk {c} has zero norm")
            cos = np.clip((items64 @ v) / (cn * item_norm), -1.0, 1.0)
            w = 1.0 if weights is None else float(weights[c])
            out[i] += w * cos
            wsum += w
        out[i] /= wsum
    return out


def _window_start(x, g, k):
    lo, hi = 0, x.shape[0] - k
    while lo < hi:
        mid = (lo + hi) // 2
        if g - x[mid] > x[mid + k] - g:
            lo = mid + 1
        else:
            hi = mid
    return lo


def loess_grid(x, y, grid, k, degree):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    n = x.shape[0]
    if y.shape[0] != n:
        raise ValueError("x and y lengths differ")
    if k < 1 or k > n:
        raise ValueError(f"neighbourhood size {k} outside [1, {n}]")
    if degree not in (0, 1, 2):
        raise ValueError("degree must be 0, 1 or 2")
    fitted = np.empty(grid.shape[0])
    degen = np.zeros(grid.shape[0], dtype=bool)
    for gi, g in enumerate(grid):
        lo = _window_start(x, g, k)
        xs, ys = x[lo:lo + k], y[lo:lo + k]
        d = np.abs(xs - g)
        dmax = max(g - xs[0], xs[-1] - g)
        if dmax > 0:
            u = np.minimum(d / dmax, 1.0)
            w = (1.0 - u**3) ** 3
        else:
            w = np.ones(k)
        if w.sum() <= 0.0:
            fitted[gi] = ys.mean()
            degen[gi] = True
            continue
        design = np.vander(xs - g, degree + 1, increasing=True)
        lhs = design.T @ (w[:, None] * design)
        rhs = design.T @ (w * ys)
        try:
            if np.linalg.cond(lhs) > 1e12:
                raise np.linalg.LinAlgError
            fitted[gi] = np.linalg.solve(lhs, rhs)[0]
        except np.linalg.LinAlgError:
            fitted[gi] = (w @ ys) / w.sum()
            degen[gi] = True
    return fitted, degen
