"""Forecasting community joining from pre-joining factor scores."""

from __future__ import annotations

import logging
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats
from scipy.special import expit

from .artifacts import csv_text, fmt
from .corpus import UserTimeline
from .efa import FactorScoreMatrix

log = logging.getLogger(__name__)

SECONDS_PER_MONTH = 30.44 * 86400


class ForecastError(ValueError):
    pass


@dataclass
class LabeledFeatureSet:
    user_ids: list
    X: np.ndarray
    y: np.ndarray
    cutoff_months_before: int
    excluded: list = field(default_factory=list)
    last_post_utc: Optional[np.ndarray] = None
    cutoffs: Optional[np.ndarray] = None


@dataclass
class LogisticModel:
    weights: np.ndarray
    intercept: float
    l2: float
    converged: bool
    iterations: int
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None

    def decision_function(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.center is not None:
            X = (X - self.center) / self.scale
        return X @ self.weights + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        d = {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l2": self.l2,
            "converged": self.converged,
            "iterations": self.iterations,
        }
        if self.center is not None:
            d["center"] = self.center.tolist()
            d["scale"] = self.scale.tolist()
        return d


@dataclass
class AucCurve:
    offsets: list
    auc_mean: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_joiners: list
    n_controls: list
    fold_aucs: list = field(default_factory=list)
    models: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        rows = ([o, fmt(m), fmt(lo), fmt(hi), nj, nc] for o, m, lo, hi, nj, nc in zip(
            self.offsets, self.auc_mean, self.ci_low, self.ci_high, self.n_joiners, self.n_controls))
        return csv_text(["months_before", "auc_mean", "ci_low", "ci_high", "n_joiners", "n_controls"], rows)


def build_features(timelines: Sequence[UserTimeline], scores: FactorScoreMatrix, months_before: int,
                   lookback_months: Optional[float] = None) -> LabeledFeatureSet:
    """Per-user mean factor scores over posts strictly before ``t0 - months_before``.

    Joiners are labelled 1, controls 0. Users with no post in the window
    are left out and listed in ``excluded``.
    """
    if months_before < 0:
        raise ForecastError("months_before must be >= 0")
    row_of = {pid: i for i, pid in enumerate(scores.post_ids)}
    users, feats, labels, last, cutoffs, excluded = [], [], [], [], [], []
    for tl in timelines:
        if tl.t0 is None:
            raise ForecastError(f"user {tl.user!r} has no t0")
        cutoff = tl.t0 - months_before * SECONDS_PER_MONTH
        start = -np.inf if lookback_months is None else cutoff - lookback_months * SECONDS_PER_MONTH
        idx = [row_of[p.id] for p in tl.posts if start <= p.created_utc < cutoff and p.id in row_of]
        if not idx:
            excluded.append(tl.user)
            continue
        users.append(tl.user)
        feats.append(scores.scores[idx].mean(axis=0))
        labels.append(1 if tl.cohort == "joiner" else 0)
        last.append(max(p.created_utc for p in tl.posts if start <= p.created_utc < cutoff and p.id in row_of))
        cutoffs.append(cutoff)
    if not users:
        raise ForecastError(f"every user lacks posts {months_before} months before t0")
    return LabeledFeatureSet(users, np.vstack(feats), np.asarray(labels, dtype=np.int64), months_before,
                             excluded, np.asarray(last, dtype=np.float64), np.asarray(cutoffs))


def assert_causal(fs: LabeledFeatureSet) -> None:
    """Raise if any feature row used a post at or after its cutoff."""
    bad = np.flatnonzero(fs.last_post_utc >= fs.cutoffs)
    if bad.size:
        raise AssertionError(f"feature rows {bad.tolist()} include posts at or after the cutoff")


def fit_logistic(X, y, l2: float = 1.0, tol: float = 1e-8, max_iter: int = 100) -> LogisticModel:
    """L2-penalized logistic regression by iteratively reweighted least squares.

    The intercept is not penalized. Newton steps are halved until the
    penalized log-likelihood stops decreasing.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ForecastError("X and y shapes do not match")
    if not np.all(np.isfinite(X)):
        raise ForecastError("X contains NaN or Inf")
    if np.unique(y).size < 2:
        raise ForecastError("y must contain both classes")
    n, k = X.shape
    A = np.hstack([np.ones((n, 1)), X])
    pen = np.full(k + 1, float(l2))
    pen[0] = 0.0
    beta = np.zeros(k + 1)

    def objective(b):
        eta = A @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * b * b))

    obj = objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(A @ beta)
        w = mu * (1 - mu)
        grad = A.T @ (y - mu) - pen * beta
        H = (A * w[:, None]).T @ A + np.diag(pen)
        step = np.linalg.lstsq(H, grad, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            cand_obj = objective(cand)
            if cand_obj >= obj - 1e-12 or t < 1e-10:
                break
            t *= 0.5
        delta = np.max(np.abs(cand - beta))
        beta, obj = cand, cand_obj
        if not np.all(np.isfinite(beta)):
            break
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn("logistic regression did not converge", RuntimeWarning, stacklevel=2)
    return LogisticModel(beta[1:].copy(), float(beta[0]), float(l2), converged, it)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(random positive outscores random negative), ties count half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ForecastError("roc_auc needs both classes")
    ranks = stats.rankdata(s, method="average")
    u = ranks[y].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def stratified_kfold(y, folds: int = 5, seed: Optional[int] = 0) -> np.ndarray:
    """Fold index per sample; each class is shuffled and dealt round-robin."""
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if np.any(counts < folds):
        raise ForecastError(f"every class needs at least {folds} members, got {dict(zip(classes.tolist(), counts.tolist()))}")
    rng = np.random.default_rng(seed)
    out = np.empty(y.shape[0], dtype=np.int64)
    start = 0
    for c in classes:
        members = np.flatnonzero(y == c)
        rng.shuffle(members)
        out[members] = (start + np.arange(members.size)) % folds
        start = (start + members.size) % folds
    return out


def _standardize(train: np.ndarray):
    center = train.mean(axis=0)
    scale = train.std(axis=0)
    scale[scale == 0] = 1.0
    return center, scale


def cross_validated_auc(fs: LabeledFeatureSet, folds: int = 5, l2: float = 1.0, seed: Optional[int] = 0):
    """Per-fold test AUCs and fitted models under stratified k-fold CV."""
    assign = stratified_kfold(fs.y, folds, seed)
    users = np.asarray(fs.user_ids, dtype=object)
    aucs, models = [], []
    for f in range(folds):
        test = assign == f
        train = ~test
        if set(users[test]) & set(users[train]):
            raise AssertionError(f"fold {f}: a user appears in both train and test rows")
        center, scale = _standardize(fs.X[train])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            model = fit_logistic((fs.X[train] - center) / scale, fs.y[train], l2=l2)
        model.center, model.scale = center, scale
        aucs.append(roc_auc(model.decision_function(fs.X[test]), fs.y[test]))
        models.append(model)
    return np.asarray(aucs), models


def mean_ci(values, level: float = 0.95):
    """Mean with a t-based confidence interval (df = len - 1)."""
    v = np.asarray(values, dtype=np.float64)
    m = v.mean()
    if v.size < 2:
        return m, m, m
    half = stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size)
    return m, m - half, m + half


def months_before_sweep(timelines: Sequence[UserTimeline], scores: FactorScoreMatrix, offsets: Sequence[int],
                        folds: int = 5, l2: float = 1.0, seed: Optional[int] = 0,
                        lookback_months: Optional[float] = None, keep_models: bool = False) -> AucCurve:
    """Cross-validated AUC of joining prediction at each months-before offset.

    Offsets whose feature set cannot support stratified CV get NaN entries.
    """
    if not offsets:
        raise ForecastError("no offsets given")
    means, lows, highs, nj, nc, fold_aucs, models = [], [], [], [], [], [], {}
    for off in offsets:
        try:
            fs = build_features(timelines, scores, off, lookback_months)
            assert_causal(fs)
            aucs, fitted = cross_validated_auc(fs, folds, l2, seed)
        except ForecastError as exc:
            log.warning("offset %s: %s", off, exc)
            means.append(np.nan)
            lows.append(np.nan)
            highs.append(np.nan)
            n_pos = n_neg = 0
            try:
                fs = build_features(timelines, scores, off, lookback_months)
                n_pos, n_neg = int(fs.y.sum()), int((1 - fs.y).sum())
            except ForecastError:
                pass
            nj.append(n_pos)
            nc.append(n_neg)
            fold_aucs.append([])
            continue
        m, lo, hi = mean_ci(aucs)
        means.append(m)
        lows.append(max(0.0, lo))
        highs.append(min(1.0, hi))
        nj.append(int(fs.y.sum()))
        nc.append(int((1 - fs.y).sum()))
        fold_aucs.append(aucs.tolist())
        if keep_models:
            for f, model in enumerate(fitted):
                models[(off, f)] = model
    return AucCurve(list(offsets), np.asarray(means), np.asarray(lows), np.asarray(highs), nj, nc,
                    fold_aucs, models)
