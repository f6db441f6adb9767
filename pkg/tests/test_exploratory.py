import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from accstress.exploratory import (
    screen_windows,
    bonferroni,
    cohens_d,
    effect_label,
    feature_level_screen,
    mann_whitney_u,
    midranks,
    weekday_stress_summary,
)
from accstress.features import FEATURE_NAMES, FeatureTable
from accstress.ingest import SurveyResponse

MONDAY_NOON_UTC = 1425297600000  # 2015-03-02 12:00 UTC
DAY = 86_400_000


def test_u_examples():
    assert mann_whitney_u([1, 2, 3], [4, 5, 6]).statistic == 0
    assert mann_whitney_u([1, 3], [2, 4]).statistic == 1
    r = mann_whitney_u([1, 2, 2, 5], [1, 2, 2, 5])
    assert r.statistic == 8 and r.pvalue == pytest.approx(1.0)


def test_all_identical_degenerate():
    r = mann_whitney_u([2, 2, 2], [2, 2])
    assert r.degenerate and r.pvalue == 1 and r.statistic == 3


def test_midranks():
    assert midranks([10, 20, 20, 30]).tolist() == [1, 2.5, 2.5, 4]


small = st.lists(st.integers(0, 6), min_size=1, max_size=10)


@settings(max_examples=150, deadline=None)
@given(small, small)
def test_exact_p_matches_scipy_and_symmetry(a, b):
    r = mann_whitney_u(a, b)
    assert 0 <= r.statistic <= len(a) * len(b)
    swapped = mann_whitney_u(b, a)
    assert swapped.statistic == r.statistic and swapped.pvalue == pytest.approx(r.pvalue, abs=1e-12)
    if len(set(a) | set(b)) > 1 and len(set(a + b)) == len(a + b):
        ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="exact")
        assert r.pvalue == pytest.approx(ref.pvalue, rel=1e-9)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=11, max_size=40), st.lists(st.integers(0, 30), min_size=11, max_size=40))
def test_normal_approximation_matches_scipy(a, b):
    if len(set(a + b)) == 1:
        return
    r = mann_whitney_u(a, b)
    ref = stats.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert r.method == "normal"
    assert r.statistic == min(ref.statistic, len(a) * len(b) - ref.statistic)
    assert r.pvalue == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-15)


def test_tied_exact_small_sample():
    # exact enumeration over midranks; oracle by brute force over all splits
    import itertools

    a, b = [1, 2, 2], [2, 3, 3, 4]
    pooled = a + b
    ranks = midranks(pooled)
    n1 = len(a)
    obs_r = ranks[:n1].sum()
    exp = n1 * (len(pooled) + 1) / 2
    splits = list(itertools.combinations(range(len(pooled)), n1))
    extreme = sum(1 for s in splits if abs(ranks[list(s)].sum() - exp) >= abs(obs_r - exp) - 1e-12)
    assert mann_whitney_u(a, b).pvalue == pytest.approx(extreme / len(splits), rel=1e-12)


@pytest.mark.parametrize("d,label", [(0.19, "negligible"), (0.2, "small"), (0.49, "small"), (0.5, "medium"), (0.79, "medium"), (0.8, "large"), (-0.5, "medium"), (0.0, "negligible")])
def test_effect_boundaries(d, label):
    assert effect_label(d) == label


def test_cohens_d_examples():
    assert cohens_d([1, 2, 3], [1, 2, 3]) == (0.0, "negligible")
    a = [0.0, 2.0]  # mean 1, sd sqrt(2)
    b = [-1.0, 1.0]  # mean 0, sd sqrt(2)
    d, label = cohens_d(a, b)
    assert d == pytest.approx(1 / math.sqrt(2))
    d, label = cohens_d([1 - 1 / math.sqrt(2), 1 + 1 / math.sqrt(2)], [-1 / math.sqrt(2), 1 / math.sqrt(2)])
    assert d == pytest.approx(1.0) and label == "large"
    d, label = cohens_d([3, 3], [3, 3])
    assert math.isnan(d) and label == "degenerate"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=20), st.lists(st.floats(-100, 100), min_size=2, max_size=20), st.floats(-10, 10).filter(lambda c: abs(c) > 1e-3))
def test_cohens_d_antisymmetric_and_scale(a, b, c):
    d, _ = cohens_d(a, b)
    if math.isnan(d):
        return
    assert cohens_d(b, a)[0] == pytest.approx(-d, rel=1e-9, abs=1e-12)
    dc, _ = cohens_d(np.multiply(a, c), np.multiply(b, c))
    if not math.isnan(dc):
        assert dc == pytest.approx(math.copysign(1, c) * d, rel=1e-6, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.integers(1, 500))
def test_bonferroni_never_lowers(p, m):
    q = bonferroni(p, m)
    assert p <= q <= 1 and q == min(1.0, p * m)


def test_screen_single_level_and_constant_feature():
    X = np.ones((6, 3))
    r = feature_level_screen("u", X, np.zeros(6, dtype=int), ["a", "b", "c"])
    assert r.results == [] and any("fewer than two" in f for f in r.flags)
    r = feature_level_screen("u", X, np.array([0, 0, 0, 2, 2, 2]), ["a", "b", "c"])
    assert len(r.results) == 3
    assert all(x.p_raw == 1 and x.effect_label == "degenerate" and x.degenerate for x in r.results)
    assert len(r.flags) == 2


def test_screen_detects_large_shift():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(100, 4))
    y = np.repeat([0, 2], 50)
    X[y == 2, 1] += 3
    r = feature_level_screen("u", X, y, ["a", "b", "c", "d"])
    hit = [x for x in r.results if x.feature == 1][0]
    assert hit.significant and hit.effect_label == "large"
    assert hit.p_corrected == min(1.0, hit.p_raw * 4)


def test_window_level_screen():
    # user u: two observed surveys, one low one high; windows in each lookback
    hour = 3600_000
    t0 = MONDAY_NOON_UTC
    surveys = [SurveyResponse("u", t0, 2, 1), SurveyResponse("u", t0 + 4 * hour, 3, 5), SurveyResponse("u", t0 - 4 * hour, 1, 5)]
    ends = np.array([t0 - 3 * hour, *(t0 - np.arange(10) * 60_000), *(t0 + 4 * hour - np.arange(10) * 60_000)], dtype=np.int64)
    vals = np.zeros((len(ends), 34))
    vals[11:, 0] = 5.0 + np.arange(10)
    vals[1:11, 0] = np.arange(10) * 0.1
    table = FeatureTable(np.array(["u"] * len(ends), dtype=object), ends, vals)
    (r,) = screen_windows(table, surveys)
    assert len(r.results) == 34  # one testable pair (low, high); slot-1 survey ignored
    first = r.results[0]
    assert first.feature_name == FEATURE_NAMES[0] and first.u_statistic == 0
    assert first.p_corrected == min(1.0, first.p_raw * 34)


def test_weekday_summary():
    mk = lambda day, score: SurveyResponse("u", MONDAY_NOON_UTC + day * DAY, 2, score)
    summary, flags = weekday_stress_summary([mk(0, 2), mk(0, 4), mk(1, 3), mk(5, 5), mk(6, 1)])
    assert summary["Mon"] == (3.0, 1.0, 2)
    assert summary["Tue"][0] == 3.0 and math.isnan(summary["Tue"][1])
    assert set(summary) == {"Mon", "Tue"}
    assert "no surveys on Wed" in flags
    allsame, _ = weekday_stress_summary([mk(d, 3) for d in range(5) for _ in range(3)])
    assert all(v[0] == 3 and v[1] == 0 for v in allsame.values())
    with pytest.raises(ValueError):
        weekday_stress_summary([])
