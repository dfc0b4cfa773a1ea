import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from extremism_eleven.corpus import JoiningRule, build_timeline
from extremism_eleven.efa import FactorScoreMatrix
from extremism_eleven.forecast import (SECONDS_PER_MONTH, ForecastError, LabeledFeatureSet, assert_causal,
                                       build_features, cross_validated_auc, fit_logistic, mean_ci,
                                       months_before_sweep, roc_auc, stratified_kfold)
from extremism_eleven.synth import PanelSpec, synthetic_panel
from conftest import make_post


def pair_count_auc(s, y):
    pos = [a for a, l in zip(s, y) if l]
    neg = [a for a, l in zip(s, y) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_auc_equals_pair_counting():
    rng = np.random.default_rng(0)
    done = 0
    while done < 1000:
        n = int(rng.integers(2, 13))
        y = rng.integers(0, 2, n)
        if y.min() == y.max():
            continue
        s = rng.integers(0, 5, n).astype(float) if done % 2 else rng.standard_normal(n)
        assert roc_auc(s, y) == pair_count_auc(s, y)
        done += 1


def test_auc_edge_cases():
    assert roc_auc([1, 2, 3, 4], [0, 0, 1, 1]) == 1.0
    assert roc_auc([4, 3, 2, 1], [0, 0, 1, 1]) == 0.0
    assert roc_auc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ForecastError):
        roc_auc([1, 2], [1, 1])


def test_intercept_only_logistic():
    for ybar_n in (1, 7, 13):
        y = np.array([1] * ybar_n + [0] * (20 - ybar_n))
        model = fit_logistic(np.empty((20, 0)), y, l2=1.0)
        ybar = y.mean()
        assert model.intercept == pytest.approx(np.log(ybar / (1 - ybar)), abs=1e-4)
        assert model.converged


def test_logistic_gradient_is_zero_at_optimum(rng):
    X = rng.standard_normal((200, 4))
    y = (X @ [1.0, -2.0, 0.0, 0.5] + rng.standard_normal(200) > 0).astype(int)
    for l2 in (0.0, 1.0, 10.0):
        m = fit_logistic(X, y, l2=l2)
        mu = m.predict_proba(X)
        grad_w = X.T @ (y - mu) - l2 * m.weights
        assert np.max(np.abs(grad_w)) < 1e-6
        assert abs(np.sum(y - mu)) < 1e-6


def test_logistic_matches_sklearn(rng):
    sk = pytest.importorskip("sklearn.linear_model")
    X = rng.standard_normal((150, 3))
    y = (X[:, 0] - X[:, 1] + rng.standard_normal(150) > 0).astype(int)
    ref = sk.LogisticRegression(C=1.0 / 2.0, tol=1e-12, max_iter=10_000).fit(X, y)
    m = fit_logistic(X, y, l2=2.0)
    assert np.allclose(m.weights, ref.coef_[0], atol=1e-5)
    assert m.intercept == pytest.approx(ref.intercept_[0], abs=1e-5)


def test_logistic_separable_stays_finite():
    X = np.array([[-2.0], [-1.0], [1.0], [2.0]])
    y = np.array([0, 0, 1, 1])
    m = fit_logistic(X, y, l2=0.1)
    assert np.all(np.isfinite(m.weights)) and m.converged


def test_logistic_errors():
    with pytest.raises(ForecastError):
        fit_logistic(np.ones((3, 1)), [1, 1, 1])
    with pytest.raises(ForecastError):
        fit_logistic(np.full((2, 1), np.nan), [0, 1])
    with pytest.raises(ForecastError):
        fit_logistic(np.ones((3, 1)), [0, 1])


@pytest.mark.parametrize("n1, n0", [(82, 100), (5, 5), (13, 31), (50, 7)])
def test_stratified_fold_counts(n1, n0):
    y = np.array([1] * n1 + [0] * n0)
    folds = stratified_kfold(y, 5, seed=3)
    for f in range(5):
        for c, n in ((1, n1), (0, n0)):
            assert abs(np.sum((folds == f) & (y == c)) - n / 5) <= 1
    sizes = np.bincount(folds)
    assert sizes.max() - sizes.min() <= 1
    assert np.array_equal(folds, stratified_kfold(y, 5, seed=3))


def test_stratified_errors():
    with pytest.raises(ForecastError):
        stratified_kfold([1, 1, 0, 0, 0, 0, 0], 5)


def _tl(user, cohort, times, t0_forum_index):
    posts = [make_post(f"{user}-{i}", user=user, ts=t,
                       forum="T" if (cohort == "joiner" and i >= t0_forum_index) else f"f{min(i, t0_forum_index)}")
             for i, t in enumerate(times)]
    return build_timeline(posts, JoiningRule({"T"}, cohort))


def _scores(timelines):
    ids = [p.id for tl in timelines for p in tl.posts]
    vals = np.arange(len(ids), dtype=float)[:, None] * [1.0, -1.0]
    return FactorScoreMatrix(ids, ["F1", "F2"], vals, "fp")


def test_features_respect_cutoff_exactly():
    t0 = 10**9
    m = SECONDS_PER_MONTH
    cutoff = t0 - 2 * m
    times = [int(cutoff) - 5, int(np.ceil(cutoff)), int(cutoff) + 100, t0, t0 + 100]
    tl = _tl("j", "joiner", times, 3)
    assert tl.t0 == t0
    fs_scores = _scores([tl])
    fs = build_features([tl], fs_scores, 2)
    # only the first post is strictly before t0 - 2 months
    assert np.allclose(fs.X, [[0.0, -0.0]])
    assert_causal(fs)
    fs0 = build_features([tl], fs_scores, 0)
    assert np.allclose(fs0.X, [[1.0, -1.0]])
    assert fs0.last_post_utc[0] < t0


def test_features_exclude_users_without_history():
    tl_j = _tl("j", "joiner", [100, 200, 300], 1)
    tl_c = _tl("c", "control", [10**8, 10**8 + 1, 10**8 + 2], 1)
    fs = build_features([tl_j, tl_c], _scores([tl_j, tl_c]), 0)
    assert fs.user_ids == ["j", "c"] and fs.y.tolist() == [1, 0]
    old = _tl("o", "control", [10**7, 10**8 + 5, 10**8 + 6], 1)
    fs = build_features([tl_j, tl_c, old], _scores([tl_j, tl_c, old]), 12)
    assert fs.user_ids == ["o"] and fs.excluded == ["j", "c"]
    with pytest.raises(ForecastError, match="every user"):
        build_features([tl_j, tl_c], _scores([tl_j, tl_c]), 12)
    with pytest.raises(ForecastError):
        build_features([tl_j], _scores([tl_j]), -1)


def test_lookback_window():
    m = SECONDS_PER_MONTH
    t0 = 10**9
    times = [int(t0 - 10 * m), int(t0 - 3 * m), int(t0 - 1 * m), t0]
    tl = _tl("j", "joiner", times, 3)
    fs = build_features([tl], _scores([tl]), 0, lookback_months=5)
    assert np.allclose(fs.X, [[1.5, -1.5]])


def test_assert_causal_detects_leak():
    fs = LabeledFeatureSet(["a"], np.zeros((1, 1)), np.array([1]), 3, last_post_utc=np.array([100.0]),
                           cutoffs=np.array([100.0]))
    with pytest.raises(AssertionError):
        assert_causal(fs)


@given(st.lists(st.integers(-400, 400), min_size=2, max_size=25), st.integers(0, 12))
def test_causality_property(offsets_days, months_before):
    t0 = 10**9
    times = sorted({t0 + d * 86400 for d in offsets_days} | {t0})
    idx = times.index(t0)
    tl = _tl("j", "joiner", times, idx)
    try:
        fs = build_features([tl], _scores([tl]), months_before)
    except ForecastError:
        assert all(t >= t0 - months_before * SECONDS_PER_MONTH for t in times)
        return
    assert_causal(fs)
    assert fs.last_post_utc[0] < t0 - months_before * SECONDS_PER_MONTH


def test_mean_ci_t_quantile():
    m, lo, hi = mean_ci([0.6, 0.7, 0.8, 0.9, 1.0])
    half = 2.7764451051977987 * np.std([0.6, 0.7, 0.8, 0.9, 1.0], ddof=1) / np.sqrt(5)
    assert m == pytest.approx(0.8)
    assert lo == pytest.approx(0.8 - half) and hi == pytest.approx(0.8 + half)
    assert mean_ci([0.7]) == (0.7, 0.7, 0.7)


def test_cross_validation_is_user_disjoint_and_seeded():
    spec = PanelSpec(n_joiners=20, n_controls=25, months_before=14, months_after=2)
    _, tls, scores = synthetic_panel(spec, seed=1)
    fs = build_features(tls, scores, 2)
    a1, models = cross_validated_auc(fs, 5, 1.0, seed=4)
    a2, _ = cross_validated_auc(fs, 5, 1.0, seed=4)
    assert np.array_equal(a1, a2) and len(models) == 5
    assert np.all((a1 >= 0) & (a1 <= 1))


def test_sweep_marks_degenerate_offsets():
    spec = PanelSpec(n_joiners=10, n_controls=10, months_before=3, months_after=1)
    _, tls, scores = synthetic_panel(spec, seed=0)
    curve = months_before_sweep(tls, scores, [6, 1, 0], folds=5)
    assert np.isnan(curve.auc_mean[0]) and curve.fold_aucs[0] == []
    assert np.all(np.isfinite(curve.auc_mean[1:]))
    assert np.all(curve.ci_low[1:] >= 0) and np.all(curve.ci_high[1:] <= 1)
    lines = curve.to_csv().splitlines()
    assert lines[0] == "months_before,auc_mean,ci_low,ci_high,n_joiners,n_controls"
    assert lines[1].startswith("6,,,,")
    with pytest.raises(ForecastError):
        months_before_sweep(tls, scores, [])
