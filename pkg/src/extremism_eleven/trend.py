"""LOESS trajectories of extremism scores aligned to the joining time."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .artifacts import csv_text, fmt
from .corpus import UserTimeline
from .efa import FactorScoreMatrix
from .forecast import SECONDS_PER_MONTH

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoessConfig:
    frac: float = 0.3
    degree: int = 1
    grid_points: int = 100

    def __post_init__(self):
        if not 0 < self.frac <= 1:
            raise ValueError("frac must lie in (0, 1]")
        if self.degree not in (0, 1, 2):
            raise ValueError("degree must be 0, 1 or 2")
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")


@dataclass
class TrajectorySeries:
    cohort: str
    points: list
    grid: np.ndarray
    fitted: np.ndarray
    n_in_window: int
    degenerate: np.ndarray = field(default=None)

    @property
    def smoothed(self) -> list:
        return list(zip(self.grid.tolist(), self.fitted.tolist()))


class CompositeScorer:
    """Single extremism score per post from its factor scores.

    By default each factor is z-scored against a reference sample and the k
    z-scores are averaged; with ``factor`` set, that one column is returned.
    """

    def __init__(self, factor_names: Sequence[str], ref_means, ref_sds, factor: Optional[str] = None):
        self.factor_names = list(factor_names)
        self.ref_means = np.asarray(ref_means, dtype=np.float64)
        self.ref_sds = np.asarray(ref_sds, dtype=np.float64)
        if np.any(self.ref_sds <= 0):
            raise ValueError("reference standard deviations must be positive")
        if factor is not None and factor not in self.factor_names:
            raise KeyError(f"unknown factor {factor!r}")
        self.factor = factor

    @classmethod
    def from_reference(cls, reference: FactorScoreMatrix, factor: Optional[str] = None) -> "CompositeScorer":
        sds = reference.scores.std(axis=0, ddof=1)
        sds[sds == 0] = 1.0
        return cls(reference.factor_names, reference.scores.mean(axis=0), sds, factor)

    def __call__(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if self.factor is not None:
            return rows[..., self.factor_names.index(self.factor)]
        return ((rows - self.ref_means) / self.ref_sds).mean(axis=-1)


def composite_score(row, factor_names: Sequence[str], ref_means=None, ref_sds=None,
                    factor: Optional[str] = None) -> float:
    k = len(factor_names)
    ref_means = np.zeros(k) if ref_means is None else ref_means
    ref_sds = np.ones(k) if ref_sds is None else ref_sds
    return float(CompositeScorer(factor_names, ref_means, ref_sds, factor)(row))


def align_to_t0(timeline: UserTimeline, scores: FactorScoreMatrix, composite: CompositeScorer):
    """``(months since t0, composite)`` for every scored post of the user."""
    if timeline.t0 is None:
        raise ValueError(f"user {timeline.user!r} has no t0")
    row_of = {pid: i for i, pid in enumerate(scores.post_ids)}
    idx, offsets = [], []
    for p in timeline.posts:
        if p.id not in row_of:
            raise KeyError(f"post {p.id!r} has no factor scores")
        idx.append(row_of[p.id])
        offsets.append((p.created_utc - timeline.t0) / SECONDS_PER_MONTH)
    values = composite(scores.scores[idx]) if idx else np.empty(0)
    return list(zip(offsets, np.asarray(values, dtype=np.float64).tolist()))


def neighbourhood_size(n: int, cfg: LoessConfig) -> int:
    return int(math.ceil(cfg.frac * n - 1e-12))


def loess(x, y, cfg: LoessConfig = LoessConfig(), grid=None):
    """Tri-cube weighted local polynomial fit evaluated on a grid.

    Each grid value is fitted from the ``ceil(frac * n)`` nearest x values.
    Returns ``(grid, fitted, degenerate)``; degenerate grid points fell back
    to a weighted mean.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
        raise ValueError("x and y must be finite")
    n = x.size
    if n < cfg.degree + 2:
        raise ValueError(f"need at least {cfg.degree + 2} points for degree {cfg.degree}")
    k = neighbourhood_size(n, cfg)
    if k < cfg.degree + 1:
        raise ValueError(f"neighbourhood of {k} points is too small for degree {cfg.degree}")
    order = np.argsort(x, kind="stable")
    xs, ys = np.ascontiguousarray(x[order]), np.ascontiguousarray(y[order])
    if grid is None:
        grid = np.linspace(xs[0], xs[-1], cfg.grid_points)
    grid = np.ascontiguousarray(grid, dtype=np.float64)
    fitted, degen = kernels.loess_grid(xs, ys, grid, k, cfg.degree)
    if np.any(degen):
        log.warning("loess fell back to a weighted mean at %d grid point(s)", int(np.sum(degen)))
    return grid, np.asarray(fitted), np.asarray(degen, dtype=bool)


def trajectory(timelines: Sequence[UserTimeline], scores: FactorScoreMatrix, composite: CompositeScorer,
               cfg: LoessConfig = LoessConfig(), cohort: Optional[str] = None,
               window: Optional[tuple] = None, per_user: bool = False) -> TrajectorySeries:
    """Pool aligned points across users and smooth them.

    With ``per_user`` each user's points are first averaged per whole month
    offset, so heavy posters do not dominate.
    """
    points = []
    for tl in timelines:
        if cohort is not None and tl.cohort != cohort:
            continue
        pts = align_to_t0(tl, scores, composite)
        if window is not None:
            pts = [(o, v) for o, v in pts if window[0] <= o <= window[1]]
        if per_user:
            buckets = defaultdict(list)
            for o, v in pts:
                buckets[math.floor(o)].append(v)
            pts = [(m + 0.5, float(np.mean(vs))) for m, vs in sorted(buckets.items())]
        points.extend(pts)
    if not points:
        raise ValueError("no points to smooth")
    x = np.array([o for o, _ in points])
    y = np.array([v for _, v in points])
    grid = None
    if window is not None:
        grid = np.linspace(max(window[0], x.min()), min(window[1], x.max()), cfg.grid_points)
    g, fitted, degen = loess(x, y, cfg, grid)
    label = cohort if cohort is not None else "all"
    return TrajectorySeries(label, points, g, fitted, neighbourhood_size(len(points), cfg), degen)


def trajectory_csv(series: Sequence[TrajectorySeries]) -> str:
    rows = ([s.cohort, fmt(g), fmt(f), s.n_in_window] for s in series for g, f in zip(s.grid, s.fitted))
    return csv_text(["cohort", "grid_offset", "fitted", "n_points_in_window"], rows)


def segment_slope(grid, fitted, lo: float, hi: float) -> float:
    """Least-squares slope of the fitted curve over ``lo <= grid <= hi``."""
    grid = np.asarray(grid)
    mask = (grid >= lo) & (grid <= hi)
    if mask.sum() < 2:
        raise ValueError("fewer than two grid points in segment")
    return float(np.polyfit(grid[mask], np.asarray(fitted)[mask], 1)[0])
