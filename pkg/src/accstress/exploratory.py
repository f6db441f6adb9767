"""Weekday summaries, Mann-Whitney U screens and Cohen's d effect sizes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .ingest import DEFAULT_UTC_OFFSET_MIN, SurveyResponse
from .features import FEATURE_NAMES, FeatureTable
from .observations import AGGREGATE_NAMES, LOOKBACK_MS, OBSERVED_SLOTS, Observation, StressLevel, bin_stress, feature_matrix

ALPHA = 0.01
EXACT_MAX_N = 20
WEEKDAYS = ("Mon", "Tue", "Wed", "Thu", "Fri")
LEVEL_PAIRS = ((StressLevel.LOW, StressLevel.MEDIUM), (StressLevel.LOW, StressLevel.HIGH), (StressLevel.MEDIUM, StressLevel.HIGH))
EFFECT_THRESHOLDS = ((0.2, "negligible"), (0.5, "small"), (0.8, "medium"))


def midranks(values) -> np.ndarray:
    """1-based ranks with ties given the average of the positions they span."""
    v = np.asarray(values, dtype=float)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], len(sv)]
    ranks = np.empty(len(v))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


@dataclass(frozen=True)
class MannWhitneyResult:
    statistic: float
    pvalue: float
    degenerate: bool = False
    method: str = "exact"


def _exact_pvalue(ranks2: np.ndarray, n_a: int, observed2: int) -> float:
    # DP over subsets of size n_a: counts[k, s] = #subsets of size k with doubled rank sum s
    total = int(ranks2.sum())
    counts = np.zeros((n_a + 1, total + 1))
    counts[0, 0] = 1.0
    for r in ranks2.tolist():
        counts[1:, r:] += counts[:-1, : total + 1 - r].copy()
    dist = counts[n_a]
    expected2 = n_a * int(ranks2.sum()) / len(ranks2)
    sums = np.arange(total + 1)
    extreme = np.abs(sums - expected2) >= abs(observed2 - expected2) - 1e-9
    return float(min(1.0, dist[extreme].sum() / dist.sum()))


def mann_whitney_u(a, b) -> MannWhitneyResult:
    """Two-sided Mann-Whitney U test; the reported statistic is min(U_a, U_b).

    Combined samples of at most 20 use the exact permutation distribution of
    the midrank sum (valid with ties); larger samples use the normal
    approximation with tie and continuity corrections.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n_a, n_b = len(a), len(b)
    if n_a < 1 or n_b < 1:
        raise ValueError("both samples need at least one value")
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return MannWhitneyResult(n_a * n_b / 2.0, 1.0, degenerate=True, method="degenerate")
    ranks = midranks(pooled)
    r_a = ranks[:n_a].sum()
    u_a = r_a - n_a * (n_a + 1) / 2.0
    u = min(u_a, n_a * n_b - u_a)
    n = n_a + n_b
    if n <= EXACT_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        return MannWhitneyResult(u, _exact_pvalue(ranks2, n_a, int(ranks2[:n_a].sum())), method="exact")

    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(np.sum(tie_counts**3 - tie_counts)) / (n * (n - 1))
    sigma = math.sqrt(n_a * n_b / 12.0 * ((n + 1) - tie_term))
    z = (abs(u_a - n_a * n_b / 2.0) - 0.5) / sigma
    p = 1.0 if z <= 0 else min(1.0, math.erfc(z / math.sqrt(2.0)))
    return MannWhitneyResult(u, p, method="normal")


def effect_label(d: float) -> str:
    if not math.isfinite(d):
        return "degenerate"
    for bound, label in EFFECT_THRESHOLDS:
        if abs(d) < bound:
            return label
    return "large"


def cohens_d(a, b) -> tuple[float, str]:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if len(a) < 2 or len(b) < 2:
        raise ValueError("Cohen's d needs at least two values per sample")
    pooled_var = ((len(a) - 1) * a.var(ddof=1) + (len(b) - 1) * b.var(ddof=1)) / (len(a) + len(b) - 2)
    if pooled_var <= 0:
        return math.nan, "degenerate"
    d = float((a.mean() - b.mean()) / math.sqrt(pooled_var))
    return d, effect_label(d)


def bonferroni(p_raw: float, m: int) -> float:
    return min(1.0, p_raw * m)


@dataclass(frozen=True)
class PairTestResult:
    user_id: str
    feature: int
    feature_name: str
    pair: tuple[StressLevel, StressLevel]
    u_statistic: float
    p_raw: float
    p_corrected: float
    significant: bool
    cohens_d: float
    effect_label: str
    degenerate: bool = False

    @property
    def pair_name(self) -> str:
        return f"{self.pair[0].name.lower()}/{self.pair[1].name.lower()}"


@dataclass
class ScreenResult:
    user_id: str
    results: list[PairTestResult] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def feature_level_screen(
    user_id: str,
    X: np.ndarray,
    y: np.ndarray,
    feature_names: Sequence[str] = AGGREGATE_NAMES,
    alpha: float = ALPHA,
) -> ScreenResult:
    """Test every feature between every pair of stress levels present for a user.

    The Bonferroni multiplicity is (number of features) x (number of
    testable level pairs) for this user.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    out = ScreenResult(user_id)
    pairs = []
    for lo, hi in LEVEL_PAIRS:
        na, nb = int(np.sum(y == lo)), int(np.sum(y == hi))
        if na == 0 or nb == 0:
            out.flags.append(f"pair {lo.name.lower()}/{hi.name.lower()} not testable (n={na},{nb})")
        else:
            pairs.append((lo, hi))
    if not pairs:
        out.flags.append("fewer than two stress levels present")
        return out
    m = X.shape[1] * len(pairs)
    for lo, hi in pairs:
        A, B = X[y == lo], X[y == hi]
        for f in range(X.shape[1]):
            test = mann_whitney_u(A[:, f], B[:, f])
            if len(A) >= 2 and len(B) >= 2:
                d, label = cohens_d(A[:, f], B[:, f])
            else:
                d, label = math.nan, "degenerate"
            p_corr = bonferroni(test.pvalue, m)
            out.results.append(
                PairTestResult(
                    user_id, f, feature_names[f], (lo, hi), test.statistic, test.pvalue, p_corr,
                    p_corr < alpha, d, label, test.degenerate,
                )
            )
    return out


def screen_observations(observations: Sequence[Observation], alpha: float = ALPHA) -> list[ScreenResult]:
    users = sorted({o.user_id for o in observations})
    out = []
    for u in users:
        X, y = feature_matrix([o for o in observations if o.user_id == u])
        out.append(feature_level_screen(u, X, y, AGGREGATE_NAMES, alpha))
    return out


def screen_windows(
    table: FeatureTable,
    surveys: Iterable[SurveyResponse],
    lookback_ms: int = LOOKBACK_MS,
    alpha: float = ALPHA,
) -> list[ScreenResult]:
    """Screen the 34 window-level features instead of the aggregates.

    Each window ending in an observed survey's lookback (ts - lookback, ts]
    takes that survey's level; windows in two lookbacks count for both.
    """
    by_user: dict[str, list[SurveyResponse]] = {}
    for s in surveys:
        if s.day_slot in OBSERVED_SLOTS:
            by_user.setdefault(s.user_id, []).append(s)
    out = []
    for u in sorted(by_user):
        sub = table.for_user(u)
        X, y = [], []
        for s in sorted(by_user[u]):
            m = (sub.end_ts > s.timestamp - lookback_ms) & (sub.end_ts <= s.timestamp)
            X.append(sub.values[m])
            y.append(np.full(int(m.sum()), int(bin_stress(s.raw_score))))
        out.append(feature_level_screen(u, np.vstack(X), np.concatenate(y), FEATURE_NAMES, alpha))
    return out


def weekday_stress_summary(
    surveys: Iterable[SurveyResponse], utc_offset_min: int = DEFAULT_UTC_OFFSET_MIN
) -> tuple[dict[str, tuple[float, float, int]], list[str]]:
    """Mean and standard error of raw scores per weekday (Mon-Fri).

    Returns ``({weekday: (mean, sem, n)}, flags)``; weekends are ignored and
    weekdays without any survey are omitted and flagged.
    """
    surveys = list(surveys)
    if not surveys:
        raise ValueError("need at least one survey")
    ts = pd.to_datetime([s.timestamp for s in surveys], unit="ms") + pd.Timedelta(minutes=utc_offset_min)
    scores = np.array([s.raw_score for s in surveys], dtype=float)
    wd = np.asarray(ts.weekday)
    summary, flags = {}, []
    for i, name in enumerate(WEEKDAYS):
        v = scores[wd == i]
        if len(v) == 0:
            flags.append(f"no surveys on {name}")
            continue
        sem = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else math.nan
        summary[name] = (float(v.mean()), sem, len(v))
    return summary, flags


def screen_frame(screens: Sequence[ScreenResult]) -> pd.DataFrame:
    rows = [
        (r.user_id, r.feature_name, r.pair_name, r.u_statistic, r.p_raw, r.p_corrected, r.significant, r.cohens_d, r.effect_label)
        for s in screens
        for r in s.results
    ]
    return pd.DataFrame(rows, columns=["user_id", "feature", "pair", "U", "p_raw", "p_corrected", "significant", "d", "label"])
