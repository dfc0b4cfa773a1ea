"""Group-level factor profiles and two-sample comparisons."""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .artifacts import csv_text, fmt
from .efa import FactorScoreMatrix


@dataclass(frozen=True)
class GroupProfile:
    group_key: str
    n_posts: int
    mean: np.ndarray
    sd: np.ndarray
    positivity: np.ndarray


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_value: float
    variant: str


def positivity_rate(scores, factor_j: int | None = None) -> float:
    """Share of posts scoring strictly above zero (on one factor column)."""
    a = np.asarray(scores, dtype=np.float64)
    if factor_j is not None and a.ndim == 2:
        a = a[:, factor_j]
    if a.size == 0:
        raise ValueError("positivity rate of an empty sample")
    return float(np.count_nonzero(a > 0) / a.shape[0])


def _profile(key: str, block: np.ndarray) -> GroupProfile:
    n = block.shape[0]
    sd = block.std(axis=0, ddof=1) if n > 1 else np.full(block.shape[1], np.nan)
    return GroupProfile(key, n, block.mean(axis=0), sd, (block > 0).mean(axis=0))


def aggregate_mean(scores: FactorScoreMatrix, key_fn: Callable | Mapping) -> list[GroupProfile]:
    """Per-group mean, sample sd and positivity over posts, groups sorted by key.

    ``key_fn`` maps a post id to its group; a mapping works too.
    """
    lookup = key_fn.__getitem__ if isinstance(key_fn, Mapping) else key_fn
    groups: dict = {}
    for i, pid in enumerate(scores.post_ids):
        groups.setdefault(str(lookup(pid)), []).append(i)
    if not groups:
        raise ValueError("no groups to aggregate")
    return [_profile(key, scores.scores[idx]) for key, idx in sorted(groups.items())]


def two_sample_ttest(a, b, variant: str = "student_pooled") -> TTestResult:
    """Two-sided two-sample t-test (pooled variance or Welch)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = a.size, b.size
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    diff = a.mean() - b.mean()
    if variant == "student_pooled":
        df = na + nb - 2
        pooled = ((na - 1) * va + (nb - 1) * vb) / df
        if pooled <= 0:
            raise ValueError("pooled variance is zero")
        se = np.sqrt(pooled * (1 / na + 1 / nb))
    elif variant == "welch":
        sa, sb = va / na, vb / nb
        if sa + sb <= 0:
            raise ValueError("both samples have zero variance")
        se = np.sqrt(sa + sb)
        df = (sa + sb) ** 2 / (sa**2 / (na - 1) + sb**2 / (nb - 1))
    else:
        raise ValueError(f"unknown t-test variant {variant!r}")
    t = diff / se
    p = 2 * stats.t.sf(abs(t), df)
    return TTestResult(float(t), float(df), float(min(1.0, p)), variant)


def compare_groups(scores: FactorScoreMatrix, in_a: Sequence[bool], variant: str = "student_pooled"):
    """Per-factor t-tests between the rows flagged in ``in_a`` and the rest.

    Returns rows ``(factor, TTestResult, p_bonferroni)``.
    """
    mask = np.asarray(in_a, dtype=bool)
    k = scores.scores.shape[1]
    out = []
    for j, name in enumerate(scores.factor_names):
        res = two_sample_ttest(scores.scores[mask, j], scores.scores[~mask, j], variant)
        out.append((name, res, min(1.0, res.p_value * k)))
    return out


def profiles_csv(profiles: list[GroupProfile], factor_names: Sequence[str]) -> str:
    header = (["group", "n_posts"] + [f"mean_{f}" for f in factor_names]
              + [f"sd_{f}" for f in factor_names] + [f"pos_{f}" for f in factor_names])
    rows = ([g.group_key, g.n_posts] + [fmt(v) for v in g.mean] + [fmt(v) for v in g.sd]
            + [fmt(v) for v in g.positivity] for g in profiles)
    return csv_text(header, rows)


def ttest_csv(results) -> str:
    rows = ([name, fmt(r.t), fmt(r.df), fmt(r.p_value), fmt(pb)] for name, r, pb in results)
    return csv_text(["factor", "t", "df", "p", "p_bonferroni"], rows)
