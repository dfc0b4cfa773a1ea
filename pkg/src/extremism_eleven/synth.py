"""Seeded synthetic data: planted factor models, joiner/control panels, text corpora."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from .corpus import JoiningRule, Post, UserTimeline, build_timeline
from .efa import FactorScoreMatrix
from .forecast import SECONDS_PER_MONTH
from .itembank import ItemBank
from .text import split_words

T_BASE = int(datetime(2016, 1, 1, tzinfo=timezone.utc).timestamp())


def planted_loadings(p_per_factor: int, k: int, loading: float) -> np.ndarray:
    L = np.zeros((p_per_factor * k, k))
    for j in range(k):
        L[j * p_per_factor:(j + 1) * p_per_factor, j] = loading
    return L


def planted_factor_data(loadings, n: int, seed: Optional[int] = 0) -> np.ndarray:
    """Draw ``n`` rows from an orthogonal factor model with unit item variance."""
    L = np.asarray(loadings, dtype=np.float64)
    rng = np.random.default_rng(seed)
    uniq = np.sqrt(np.clip(1.0 - (L**2).sum(axis=1), 0.0, None))
    F = rng.standard_normal((n, L.shape[1]))
    return F @ L.T + rng.standard_normal((n, L.shape[0])) * uniq


def equicorrelated(p: int, r: float) -> np.ndarray:
    R = np.full((p, p), r)
    np.fill_diagonal(R, 1.0)
    return R


def sample_with_correlation(R, n: int, seed: Optional[int] = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    C = np.linalg.cholesky(np.asarray(R, dtype=np.float64))
    return rng.standard_normal((n, C.shape[0])) @ C.T


@dataclass(frozen=True)
class PanelSpec:
    """Shape of a synthetic joiner/control panel.

    Joiners' mean score on the drifting factors rises linearly from 0 at
    ``onset_months`` before t0 to ``drift`` at t0 and stays there afterwards.
    Controls are stationary.
    """

    n_joiners: int = 82
    n_controls: int = 100
    k: int = 11
    drifting: tuple = (0, 1, 2, 3)
    drift: float = 2.0
    onset_months: float = 15.0
    months_before: float = 24.0
    months_after: float = 12.0
    posts_per_month: float = 5.0
    user_sd: float = 0.3
    noise_sd: float = 1.0
    target_forum: str = "Incels"


def drift_shift(rel_months, spec: PanelSpec) -> np.ndarray:
    rel = np.asarray(rel_months, dtype=np.float64)
    return spec.drift * np.clip((rel + spec.onset_months) / spec.onset_months, 0.0, 1.0)


def synthetic_panel(spec: PanelSpec = PanelSpec(), seed: Optional[int] = 0):
    """Posts, timelines and factor scores for a joiner/control panel.

    Joiners post in general forums and first appear in ``spec.target_forum``
    at t0; controls first post in a new forum at t0. Timelines are rebuilt
    from the posts with :func:`build_timeline`.
    """
    rng = np.random.default_rng(seed)
    posts, rows = [], []
    timelines = []
    span = spec.months_before + spec.months_after
    for u in range(spec.n_joiners + spec.n_controls):
        joiner = u < spec.n_joiners
        user = f"{'j' if joiner else 'c'}{u:04d}"
        t0 = T_BASE + int(rng.integers(0, 365 * 86400))
        n_posts = max(3, int(rng.poisson(spec.posts_per_month * span)))
        rel = np.sort(rng.uniform(-spec.months_before, spec.months_after, n_posts))
        # the joining post sits exactly at t0
        rel[np.argmin(np.abs(rel))] = 0.0
        base = rng.normal(0.0, spec.user_sd, spec.k)
        user_posts = []
        for i, r in enumerate(rel):
            ts = t0 + int(round(r * SECONDS_PER_MONTH))
            if r == 0.0:
                ts = t0
            if joiner:
                forum = spec.target_forum if r >= 0 else f"general{int(rng.integers(0, 3))}"
            else:
                forum = "newforum" if r >= 0 else "oldforum"
            pid = f"{user}-{i:04d}"
            score = base + rng.normal(0.0, spec.noise_sd, spec.k)
            if joiner:
                score[list(spec.drifting)] += drift_shift(r, spec)
            post = Post(pid, user, forum, ts, "synthetic post text with enough words to pass any filter")
            user_posts.append(post)
            posts.append(post)
            rows.append(score)
        rule = JoiningRule(frozenset({spec.target_forum}), "joiner" if joiner else "control")
        timelines.append(build_timeline(user_posts, rule))
    names = [f"F{j + 1}" for j in range(spec.k)]
    scores = FactorScoreMatrix([p.id for p in posts], names, np.vstack(rows), "synthetic")
    return posts, timelines, scores


def relabel_randomly(timelines, seed: Optional[int] = 0) -> list[UserTimeline]:
    """Shuffle cohort labels across users, keeping the label counts."""
    rng = np.random.default_rng(seed)
    cohorts = [t.cohort for t in timelines]
    rng.shuffle(cohorts)
    return [UserTimeline(t.user, t.posts, t.t0, c) for t, c in zip(timelines, cohorts)]


FILLER = (
    "the a and to of in it that is was for on with this my you have but not just be are "
    "so like at they what all if one about out do get would there people can time think "
    "know really good more some when from your been up or me which any had also only game "
    "movie season team work day new first see make well way still even want back going"
).split()


def synthetic_corpus(bank: ItemBank, n_posts: int = 10_000, n_users: int = 200,
                     seed: Optional[int] = 0, mean_words: int = 60):
    """Text posts whose word mix leans toward user-specific item groups.

    Each user has a latent affinity for a few bank scales; a post draws a
    share of its words from item texts of those scales and the rest from
    filler vocabulary. Forums include a target community, two banned and two
    not-banned political forums, and general forums. Returns
    ``(posts, forum_meta)`` with ``forum_meta`` mapping forum -> attributes.
    """
    rng = np.random.default_rng(seed)
    scales = sorted({it.scale for it in bank.items})
    scale_words = {s: [w for it in bank.items if it.scale == s for w in split_words(it.text)] for s in scales}
    forums = {
        "Incels": {"target": True, "banned": None},
        "pol_banned_a": {"target": False, "banned": True},
        "pol_banned_b": {"target": False, "banned": True},
        "pol_open_a": {"target": False, "banned": False},
        "pol_open_b": {"target": False, "banned": False},
        "movies": {"target": False, "banned": None},
        "nfl": {"target": False, "banned": None},
        "AskReddit": {"target": False, "banned": None},
    }
    banned_scales = scales[: len(scales) // 2]
    general = ["movies", "nfl", "AskReddit"]
    posts = []
    per_user = np.maximum(1, rng.multinomial(n_posts - n_users, np.full(n_users, 1 / n_users)) + 1)
    pid = 0
    for u in range(n_users):
        user = f"user{u:04d}"
        joiner = u % 4 == 0
        affinity = rng.dirichlet(np.full(len(scales), 0.3))
        home = general[u % len(general)]
        political = ["pol_banned_a", "pol_banned_b", "pol_open_a", "pol_open_b"][u % 4]
        start = T_BASE + int(rng.integers(0, 180 * 86400))
        times = np.sort(start + rng.integers(0, 730 * 86400, per_user[u]))
        join_at = times[len(times) // 2]
        for t in times:
            progress = (t - start) / (730 * 86400)
            if joiner and t >= join_at:
                forum = "Incels"
            elif t >= join_at:
                forum = political if rng.random() < 0.5 else home
            else:
                forum = home
            n_words = max(10, int(rng.poisson(mean_words)))
            share = 0.15 + 0.35 * rng.random()
            if joiner:
                share = min(0.9, share + 0.3 * progress)
            mix = affinity.copy()
            if forums[forum]["banned"]:
                mix = mix + np.array([0.5 if s in banned_scales else 0.0 for s in scales])
                mix /= mix.sum()
            n_item = rng.binomial(n_words, share)
            words = []
            if n_item:
                picks = rng.choice(len(scales), size=n_item, p=mix)
                for s in picks:
                    pool = scale_words[scales[s]]
                    words.append(pool[int(rng.integers(0, len(pool)))])
            words.extend(FILLER[i] for i in rng.integers(0, len(FILLER), n_words - n_item))
            rng.shuffle(words)
            posts.append(Post(f"p{pid:06d}", user, forum, int(t), " ".join(words), "en"))
            pid += 1
    return posts, forums
