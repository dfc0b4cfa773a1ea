import csv
import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from extremism_eleven.corpus import JoiningRule, build_timeline
from extremism_eleven.efa import FactorScoreMatrix
from extremism_eleven.forecast import SECONDS_PER_MONTH
from extremism_eleven.trend import (CompositeScorer, LoessConfig, TrajectorySeries, align_to_t0, composite_score,
                                    loess, neighbourhood_size, segment_slope, trajectory, trajectory_csv)
from conftest import make_post


def hand_value():
    """Local-linear fit at x0 = 3 from x = [0, 1, 3, 4, 7], y = [2, 1, 4, 3, 6], 4 neighbours.

    Neighbours 0, 1, 3, 4 with d_max = 3; tri-cube weights 0, (19/27)^3, 1, (26/27)^3.
    """
    w = [Fraction(19, 27) ** 3, Fraction(1), Fraction(26, 27) ** 3]
    u = [-2, 0, 1]
    y = [1, 4, 3]
    S = sum(w)
    Su = sum(a * b for a, b in zip(w, u))
    Suu = sum(a * b * b for a, b in zip(w, u))
    Sy = sum(a * b for a, b in zip(w, y))
    Suy = sum(a * b * c for a, b, c in zip(w, u, y))
    return (Suu * Sy - Su * Suy) / (S * Suu - Su**2)


def test_hand_computed_instance():
    assert hand_value() == Fraction(506292854, 164246271)
    _, fitted, degen = loess([0, 1, 3, 4, 7], [2, 1, 4, 3, 6], LoessConfig(frac=0.8), grid=[3.0])
    assert fitted[0] == pytest.approx(float(hand_value()), abs=1e-9)
    assert not degen[0]


@pytest.mark.parametrize("frac", [0.1, 0.25, 0.3, 0.5, 0.9, 1.0])
def test_constant_and_linear_reproduced(frac, rng):
    x = np.sort(rng.uniform(-12, 12, 300))
    cfg = LoessConfig(frac=frac, degree=1, grid_points=57)
    g, f, _ = loess(x, np.full_like(x, 2.5), cfg)
    assert np.max(np.abs(f - 2.5)) < 1e-9
    g, f, _ = loess(x, 0.3 * x - 1.0, cfg)
    assert np.max(np.abs(f - (0.3 * g - 1.0))) < 1e-9


def test_quadratic_reproduced_by_degree_two(rng):
    x = rng.uniform(-3, 3, 100)
    g, f, _ = loess(x, x**2 - x, LoessConfig(frac=0.4, degree=2))
    assert np.max(np.abs(f - (g**2 - g))) < 1e-8


def test_degree_zero_is_weighted_mean():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    y = np.array([1.0, 2.0, 4.0, 8.0])
    _, f, _ = loess(x, y, LoessConfig(frac=0.75, degree=0), grid=[1.0])
    # window 0, 1, 2 with d_max = 1: weights 0, 1, 0
    assert f[0] == pytest.approx(2.0, abs=1e-12)


def test_degenerate_window_falls_back():
    x = np.array([0.0, 0.0, 0.0, 5.0, 6.0])
    y = np.array([1.0, 2.0, 3.0, 10.0, 10.0])
    _, f, degen = loess(x, y, LoessConfig(frac=0.6, degree=1), grid=[0.0])
    assert degen[0]
    assert f[0] == pytest.approx(2.0)


def test_loess_errors():
    with pytest.raises(ValueError):
        loess([1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        loess([1, 2], [1, 2])
    with pytest.raises(ValueError):
        loess([0, 1, np.nan], [1, 2, 3])
    with pytest.raises(ValueError):
        loess(np.arange(10.0), np.arange(10.0), LoessConfig(frac=0.1, degree=1))
    for bad in (dict(frac=0), dict(frac=1.5), dict(degree=3), dict(grid_points=1)):
        with pytest.raises(ValueError):
            LoessConfig(**bad)


def test_neighbourhood_size():
    assert neighbourhood_size(10, LoessConfig(frac=0.3)) == 3
    assert neighbourhood_size(11, LoessConfig(frac=0.3)) == 4
    assert neighbourhood_size(100, LoessConfig(frac=0.29)) == 29


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.2, 1.0), st.integers(0, 10**6))
def test_linear_property(a, b, frac, seed):
    x = np.random.default_rng(seed).uniform(-10, 10, 40)
    g, f, _ = loess(x, a + b * x, LoessConfig(frac=frac))
    assert np.max(np.abs(f - (a + b * g))) < 1e-9 * max(1.0, abs(a) + 10 * abs(b))


def test_composite_scorer():
    ref = FactorScoreMatrix(["a", "b", "c"], ["F1", "F2"], np.array([[0.0, 10.0], [2.0, 20.0], [4.0, 30.0]]), "fp")
    c = CompositeScorer.from_reference(ref)
    assert np.allclose(c(ref.scores), [-1.0, 0.0, 1.0])
    assert CompositeScorer.from_reference(ref, "F2")([[1.0, 7.0]]) == 7.0
    assert composite_score([1.0, 3.0], ["F1", "F2"]) == 2.0
    with pytest.raises(KeyError):
        CompositeScorer.from_reference(ref, "F9")
    with pytest.raises(ValueError):
        CompositeScorer(["F1"], [0.0], [0.0])


def _timeline_and_scores():
    t0 = 10**9
    times = [int(t0 + d * SECONDS_PER_MONTH) for d in (-2, -1, 0, 1.5)]
    posts = [make_post(f"p{i}", forum="T" if i >= 2 else "a", ts=t) for i, t in enumerate(times)]
    tl = build_timeline(posts, JoiningRule({"T"}))
    fs = FactorScoreMatrix([p.id for p in posts], ["F1"], np.array([[1.0], [2.0], [3.0], [4.0]]), "fp")
    return tl, fs


def test_align_to_t0():
    tl, fs = _timeline_and_scores()
    pts = align_to_t0(tl, fs, CompositeScorer(["F1"], [0.0], [1.0]))
    assert [round(o, 6) for o, _ in pts] == [-2.0, -1.0, 0.0, 1.5]
    assert [v for _, v in pts] == [1.0, 2.0, 3.0, 4.0]
    missing = FactorScoreMatrix(["p0"], ["F1"], np.array([[1.0]]), "fp")
    with pytest.raises(KeyError):
        align_to_t0(tl, missing, CompositeScorer(["F1"], [0.0], [1.0]))


def test_trajectory_window_and_per_user():
    tl, fs = _timeline_and_scores()
    comp = CompositeScorer(["F1"], [0.0], [1.0])
    s = trajectory([tl], fs, comp, LoessConfig(frac=1.0, grid_points=5), cohort="joiner", window=(-1.0, 2.0))
    assert len(s.points) == 3 and s.grid[0] == pytest.approx(-1.0) and s.grid[-1] == pytest.approx(1.5)
    s = trajectory([tl], fs, comp, LoessConfig(frac=1.0, grid_points=5), per_user=True)
    assert [o for o, _ in s.points] == [-1.5, -0.5, 0.5, 1.5]
    with pytest.raises(ValueError):
        trajectory([tl], fs, comp, cohort="control")


def test_trajectory_csv_and_slope():
    grid = np.linspace(-12, 12, 49)
    s = TrajectorySeries("joiner", [], grid, np.where(grid < 0, 0.1 * grid, 0.0), 10)
    rows = list(csv.reader(io.StringIO(trajectory_csv([s]))))
    assert rows[0] == ["cohort", "grid_offset", "fitted", "n_points_in_window"] and len(rows) == 50
    assert segment_slope(grid, s.fitted, -12, -0.1) == pytest.approx(0.1)
    assert segment_slope(grid, s.fitted, 0, 12) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        segment_slope(grid, s.fitted, 100, 200)
