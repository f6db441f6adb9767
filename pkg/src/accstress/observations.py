"""Stress binning and per-survey aggregation of window features."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .features import FEATURE_NAMES, FeatureTable, N_FEATURES
from .ingest import SurveyResponse

logger = logging.getLogger(__name__)

LOOKBACK_MS = 2 * 3600 * 1000
OBSERVED_SLOTS = (2, 3)
AGGREGATES = ("mean", "max", "min")
AGGREGATE_NAMES = tuple(f"{agg}_{name}" for agg in AGGREGATES for name in FEATURE_NAMES)
N_AGGREGATES = len(AGGREGATE_NAMES)
OBSERVATION_KEYS = ("user_id", "survey_ts", "day_slot", "label")


class StressLevel(enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


LEVELS = tuple(StressLevel)


def bin_stress(raw_score: int) -> StressLevel:
    """Map a 1..5 self-report onto Low (1-2), Medium (3) or High (4-5)."""
    if raw_score not in (1, 2, 3, 4, 5):
        raise ValueError(f"stress score must be in 1..5, got {raw_score!r}")
    if raw_score <= 2:
        return StressLevel.LOW
    if raw_score == 3:
        return StressLevel.MEDIUM
    return StressLevel.HIGH


@dataclass(frozen=True, eq=False)
class Observation:
    user_id: str
    survey_ts: int
    day_slot: int
    label: StressLevel
    features: np.ndarray
    window_count: int

    @property
    def key(self) -> tuple[str, int]:
        return (self.user_id, self.survey_ts)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.key == other.key
            and self.day_slot == other.day_slot
            and self.label == other.label
            and self.window_count == other.window_count
            and np.array_equal(self.features, other.features)
        )


@dataclass
class DroppedSurvey:
    user_id: str
    survey_ts: int
    reason: str


def aggregate_windows(values: np.ndarray) -> np.ndarray:
    """Concatenate column-wise mean, max and min of a (k, 34) block."""
    values = np.asarray(values, dtype=float)
    mean = np.clip(values.mean(axis=0), values.min(axis=0), values.max(axis=0))
    return np.concatenate([mean, values.max(axis=0), values.min(axis=0)])


def build_observations(
    windows: FeatureTable,
    surveys: Iterable[SurveyResponse],
    lookback_ms: int = LOOKBACK_MS,
    min_windows: int = 1,
    dropped: list[DroppedSurvey] | None = None,
) -> list[Observation]:
    """One observation per slot-2/3 survey with windows ending in (ts - lookback, ts].

    Surveys with fewer than ``min_windows`` qualifying windows are dropped,
    logged, and appended to ``dropped`` when a list is supplied.
    """
    by_user: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    users = windows.user_ids
    for user in np.unique(users) if len(users) else []:
        m = users == user
        order = np.lexsort((np.arange(m.sum()), windows.end_ts[m]))
        by_user[str(user)] = (windows.end_ts[m][order], windows.values[m][order])

    out = []
    for s in sorted(surveys):
        if s.day_slot not in OBSERVED_SLOTS:
            continue
        ts, vals = by_user.get(s.user_id, (np.zeros(0, dtype=np.int64), np.zeros((0, N_FEATURES))))
        lo = np.searchsorted(ts, s.timestamp - lookback_ms, side="right")
        hi = np.searchsorted(ts, s.timestamp, side="right")
        if hi - lo < max(min_windows, 1):
            reason = f"{hi - lo} windows in lookback"
            logger.info("dropping survey %s@%d: %s", s.user_id, s.timestamp, reason)
            if dropped is not None:
                dropped.append(DroppedSurvey(s.user_id, s.timestamp, reason))
            continue
        out.append(Observation(s.user_id, s.timestamp, s.day_slot, bin_stress(s.raw_score), aggregate_windows(vals[lo:hi]), int(hi - lo)))
    return out


def class_counts(observations: Iterable[Observation]) -> dict[str, int]:
    counts = {lvl.name.lower(): 0 for lvl in LEVELS}
    for o in observations:
        counts[StressLevel(o.label).name.lower()] += 1
    counts["total"] = sum(counts.values())
    return counts


def format_class_counts(counts: dict[str, int]) -> str:
    return (
        "Stress level:    Low  Medium  High\n"
        f"# observations {counts['low']:5d} {counts['medium']:7d} {counts['high']:5d}   Total: {counts['total']:,}"
    )


def feature_matrix(observations: Sequence[Observation]) -> tuple[np.ndarray, np.ndarray]:
    if not observations:
        return np.zeros((0, N_AGGREGATES)), np.zeros(0, dtype=np.int64)
    X = np.vstack([o.features for o in observations])
    y = np.array([int(o.label) for o in observations], dtype=np.int64)
    return X, y


def write_observation_file(observations: Sequence[Observation], path) -> None:
    X, y = feature_matrix(observations)
    df = pd.DataFrame(X, columns=list(AGGREGATE_NAMES))
    df.insert(0, "label", y)
    df.insert(0, "day_slot", [o.day_slot for o in observations])
    df.insert(0, "survey_ts", np.array([o.survey_ts for o in observations], dtype=np.int64))
    df.insert(0, "user_id", [o.user_id for o in observations])
    df["window_count"] = [o.window_count for o in observations]
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def read_observation_file(path) -> list[Observation]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    df = pd.read_csv(path, dtype={"user_id": str}, keep_default_na=False, float_precision="round_trip")
    expected = [*OBSERVATION_KEYS, *AGGREGATE_NAMES, "window_count"]
    if list(df.columns) != expected:
        raise ValueError(f"{path}: observation file header does not match the expected schema")
    X = df[list(AGGREGATE_NAMES)].to_numpy(dtype=float)
    return [
        Observation(u, int(t), int(s), StressLevel(int(lab)), X[i], int(wc))
        for i, (u, t, s, lab, wc) in enumerate(
            zip(df.user_id, df.survey_ts, df.day_slot, df.label, df.window_count)
        )
    ]
