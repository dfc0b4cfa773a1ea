"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --chunks 100000 --dim 1024
"""

import argparse
import time

import numpy as np

from extremism_eleven import _fallback

try:
    from extremism_eleven import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeats):
    times = []
    out = None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_scores(args, rng):
    chunks = rng.standard_normal((args.chunks, args.dim)).astype(np.float32)
    items = rng.standard_normal((args.items, args.dim)).astype(np.float32)
    offsets = np.arange(0, args.chunks + 1, args.chunks_per_post, dtype=np.int64)
    if offsets[-1] != args.chunks:
        offsets = np.append(offsets, args.chunks)
    rows = []
    results = {}
    for name, mod in (("python", _fallback), ("cython", _kernels)):
        if mod is None:
            continue
        t, out = best_of(lambda: mod.chunk_item_mean(chunks, items, offsets), args.repeats)
        results[name] = out
        rows.append((name, t, args.chunks / t))
    print(f"chunk_item_mean: {args.chunks} chunks x {args.items} items, dim {args.dim}")
    for name, t, rate in rows:
        print(f"  {name:7s} {t:8.3f}s  {rate:12.0f} chunks/s")
    if len(results) == 2:
        print(f"  max |cython - python| = {np.max(np.abs(results['cython'] - results['python'])):.2e}")


def bench_loess(args, rng):
    x = np.sort(rng.uniform(-12, 12, args.points))
    y = np.sin(x / 3) + rng.standard_normal(args.points) * 0.2
    grid = np.linspace(x[0], x[-1], args.grid)
    k = int(np.ceil(0.3 * args.points))
    results = {}
    print(f"loess_grid: {args.points} points, {args.grid} grid values, k={k}")
    for name, mod in (("python", _fallback), ("cython", _kernels)):
        if mod is None:
            continue
        t, (fitted, _) = best_of(lambda: mod.loess_grid(x, y, grid, k, 1), args.repeats)
        results[name] = np.asarray(fitted)
        print(f"  {name:7s} {t:8.4f}s")
    if len(results) == 2:
        print(f"  max |cython - python| = {np.max(np.abs(results['cython'] - results['python'])):.2e}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--chunks", type=int, default=100_000)
    ap.add_argument("--items", type=int, default=89)
    ap.add_argument("--dim", type=int, default=1024)
    ap.add_argument("--chunks-per-post", type=int, default=4)
    ap.add_argument("--points", type=int, default=20_000)
    ap.add_argument("--grid", type=int, default=400)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(args.seed)
    bench_scores(args, rng)
    bench_loess(args, rng)


if __name__ == "__main__":
    main()
