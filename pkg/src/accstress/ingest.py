"""Parsing and validation of raw accelerometer and survey files.

Accelerometer data is held column-wise (one :class:`AccelStream` per user)
because a single workday at 5 Hz is already ~150k rows per user.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

ACCEL_COLUMNS = ("user_id", "timestamp_ms", "x", "y", "z")
SURVEY_COLUMNS = ("user_id", "timestamp_ms", "day_slot", "stress_score")

DAY_MS = 86_400_000
DEFAULT_UTC_OFFSET_MIN = 60
DEFAULT_RATE_HZ = 5.0


class IngestError(ValueError):
    """Fatal problem with an input file (bad header, duplicate timestamps)."""


@dataclass(frozen=True)
class RowError:
    line: int
    reason: str


@dataclass(frozen=True)
class AccelSample:
    user_id: str
    timestamp: int
    x: float
    y: float
    z: float


@dataclass(frozen=True, eq=False)
class AccelStream:
    """Time-sorted accelerometer samples of one user (m/s^2)."""

    user_id: str
    timestamps: np.ndarray
    xyz: np.ndarray

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        xyz = np.ascontiguousarray(self.xyz, dtype=np.float64).reshape(-1, 3)
        if len(ts) != len(xyz):
            raise ValueError("timestamps and xyz differ in length")
        if len(ts) > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError(f"stream for {self.user_id!r} is not strictly increasing")
        ts.flags.writeable = False
        xyz.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "xyz", xyz)

    def __len__(self) -> int:
        return len(self.timestamps)

    def __iter__(self) -> Iterator[AccelSample]:
        for t, (x, y, z) in zip(self.timestamps.tolist(), self.xyz.tolist()):
            yield AccelSample(self.user_id, t, x, y, z)

    def __eq__(self, other) -> bool:
        if not isinstance(other, AccelStream):
            return NotImplemented
        return (
            self.user_id == other.user_id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.xyz, other.xyz)
        )

    @classmethod
    def empty(cls, user_id: str) -> "AccelStream":
        return cls(user_id, np.zeros(0, dtype=np.int64), np.zeros((0, 3)))


@dataclass(frozen=True, order=True)
class SurveyResponse:
    user_id: str
    timestamp: int
    day_slot: int
    raw_score: int

    def __post_init__(self):
        if self.day_slot not in (1, 2, 3):
            raise ValueError(f"day_slot must be 1, 2 or 3, got {self.day_slot}")
        if self.raw_score not in (1, 2, 3, 4, 5):
            raise ValueError(f"stress score must be in 1..5, got {self.raw_score}")


@dataclass(frozen=True)
class UserSession:
    user_id: str
    stream: AccelStream
    surveys: tuple[SurveyResponse, ...]
    nominal_rate_hz: float = DEFAULT_RATE_HZ
    flags: tuple[str, ...] = ()


@dataclass
class AccelParseResult:
    streams: dict[str, AccelStream]
    rejected: list[RowError] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return sum(len(s) for s in self.streams.values())


@dataclass
class SurveyParseResult:
    surveys: list[SurveyResponse]
    rejected: list[RowError] = field(default_factory=list)


def local_day(timestamp_ms, utc_offset_min: int = DEFAULT_UTC_OFFSET_MIN):
    """Calendar day index (days since epoch) in a fixed UTC offset."""
    return (np.asarray(timestamp_ms, dtype=np.int64) + utc_offset_min * 60_000) // DAY_MS


def _check_header(path, columns: Sequence[str], schema: Mapping[str, str] | None) -> list[str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    schema = dict(schema or {})
    expected = [schema.get(c, c) for c in columns]
    header = list(pd.read_csv(path, dtype=str, nrows=0, encoding="utf-8").columns)
    if header != expected:
        raise IngestError(f"{path}: header {header} does not match schema {expected}")
    return expected


def _read_raw(path, columns: Sequence[str], schema: Mapping[str, str] | None, chunksize: int | None = None, typed: bool = False):
    """Yield frames (one, or one per chunk) with a ``_line`` column.

    By default every cell is read as a string.  With ``typed`` only the
    first column stays a string and clean numeric columns come back as
    exactly parsed numbers; a column holding any malformed cell stays
    object-typed for the caller to validate.
    """
    expected = _check_header(path, columns, schema)
    opts = {"dtype": {expected[0]: str}, "float_precision": "round_trip"} if typed else {"dtype": str}
    reader = pd.read_csv(path, keep_default_na=False, na_filter=False, encoding="utf-8", chunksize=chunksize, **opts)
    frames = [reader] if chunksize is None else reader
    # header is line 1
    line = 2
    for df in frames:
        df.columns = list(columns)
        df["_line"] = np.arange(line, line + len(df))
        line += len(df)
        yield df


def _to_int(col: pd.Series) -> pd.Series:
    num = col.astype(float) if col.dtype.kind in "iuf" else pd.to_numeric(col, errors="coerce")
    ok = num.notna() & np.isfinite(num) & (num == np.round(num))
    return num.where(ok)


def _to_float(col: pd.Series) -> pd.Series:
    if col.dtype.kind in "iuf":
        num = col.astype(float)
        return num.where(np.isfinite(num))
    num = pd.to_numeric(col, errors="coerce")
    ok = np.isfinite(num)
    # pandas' fast parser can be off by an ulp; re-parse valid cells with float() for exact round trips
    exact = num.where(ok)
    exact[ok] = col[ok].to_numpy(dtype=object).astype(float)
    return exact


def parse_accel_file(path, schema: Mapping[str, str] | None = None, chunksize: int = 1_000_000) -> AccelParseResult:
    """Read an accelerometer CSV into per-user time-sorted streams.

    Malformed rows (non-numeric or non-finite values, empty user id) are
    dropped and reported with their line number.  Duplicate timestamps
    within one user raise :class:`IngestError`.  The file is read in chunks
    so large cohorts stay within memory.
    """
    rejected: list[RowError] = []
    codes: dict[str, int] = {}
    parts = []
    for df in _read_raw(path, ACCEL_COLUMNS, schema, chunksize, typed=True):
        ts = _to_int(df["timestamp_ms"])
        axes = {c: _to_float(df[c]) for c in ("x", "y", "z")}
        bad = df["user_id"].str.len() == 0
        reasons = pd.Series("", index=df.index)
        reasons[bad] = "empty user_id"
        for name, col in [("timestamp_ms", ts), *axes.items()]:
            miss = col.isna() & ~bad
            reasons[miss] = f"invalid {name} value"
            bad |= col.isna()
        for line, reason in zip(df.loc[bad, "_line"], reasons[bad]):
            rejected.append(RowError(int(line), reason))
        users = df.loc[~bad, "user_id"]
        for u in users.unique():
            codes.setdefault(u, len(codes))
        parts.append(
            (
                users.map(codes).to_numpy(np.int64),
                ts[~bad].to_numpy(np.int64),
                np.column_stack([axes[c][~bad].to_numpy(float) for c in ("x", "y", "z")]),
                df.loc[~bad, "_line"].to_numpy(np.int64),
            )
        )
    if rejected:
        logger.warning("%s: rejected %d malformed rows", path, len(rejected))
    if not parts:
        return AccelParseResult({}, rejected)
    code = np.concatenate([p[0] for p in parts])
    t = np.concatenate([p[1] for p in parts])
    xyz = np.concatenate([p[2] for p in parts])
    lines = np.concatenate([p[3] for p in parts])

    streams = {}
    for user in sorted(codes):
        m = np.flatnonzero(code == codes[user])
        m = m[np.lexsort((lines[m], t[m]))]
        ut = t[m]
        dup = np.flatnonzero(ut[1:] == ut[:-1])
        if len(dup):
            idx = np.unique(np.concatenate([dup, dup + 1]))[:6]
            detail = ", ".join(f"{user}@{ut[i]} (line {lines[m][i]})" for i in idx)
            raise IngestError(f"{path}: duplicate sample timestamps: {detail}")
        streams[user] = AccelStream(user, ut, xyz[m])
    return AccelParseResult(streams, rejected)


def parse_survey_file(
    path,
    schema: Mapping[str, str] | None = None,
    utc_offset_min: int = DEFAULT_UTC_OFFSET_MIN,
) -> SurveyParseResult:
    """Read a survey CSV, rejecting out-of-range rows and per-day slot duplicates.

    When two rows share (user, local day, slot) the earlier timestamp is kept,
    so the outcome does not depend on row order in the file.
    """
    df = next(_read_raw(path, SURVEY_COLUMNS, schema))
    rejected: list[RowError] = []
    ts = _to_int(df["timestamp_ms"])
    slot = _to_int(df["day_slot"])
    score = _to_int(df["stress_score"])

    rows = []
    for i, line in enumerate(df["_line"].tolist()):
        user = df["user_id"].iat[i]
        if not user:
            rejected.append(RowError(line, "empty user_id"))
        elif pd.isna(ts.iat[i]):
            rejected.append(RowError(line, "invalid timestamp_ms value"))
        elif pd.isna(slot.iat[i]) or int(slot.iat[i]) not in (1, 2, 3):
            rejected.append(RowError(line, f"day_slot out of range: {df['day_slot'].iat[i]!r}"))
        elif pd.isna(score.iat[i]) or int(score.iat[i]) not in range(1, 6):
            rejected.append(RowError(line, f"stress_score out of range: {df['stress_score'].iat[i]!r}"))
        else:
            rows.append((user, int(ts.iat[i]), int(slot.iat[i]), int(score.iat[i]), line))

    rows.sort()
    seen = set()
    surveys = []
    for user, t, s, score_, line in rows:
        key = (user, int(local_day(t, utc_offset_min)), s)
        if key in seen:
            rejected.append(RowError(line, f"duplicate survey for user {user}, slot {s} on the same day"))
            continue
        seen.add(key)
        surveys.append(SurveyResponse(user, t, s, score_))
    rejected.sort(key=lambda r: r.line)
    if rejected:
        logger.warning("%s: rejected %d survey rows", path, len(rejected))
    return SurveyParseResult(surveys, rejected)


def build_sessions(
    streams: Mapping[str, AccelStream],
    surveys: Sequence[SurveyResponse],
    nominal_rate_hz: float = DEFAULT_RATE_HZ,
) -> dict[str, UserSession]:
    by_user: dict[str, list[SurveyResponse]] = {}
    for s in surveys:
        by_user.setdefault(s.user_id, []).append(s)
    sessions = {}
    for user in sorted(set(streams) | set(by_user)):
        stream = streams.get(user)
        flags = ()
        if stream is None or len(stream) == 0:
            stream = AccelStream.empty(user)
            if user in by_user:
                flags = ("no-samples",)
                logger.warning("user %s has surveys but no accelerometer samples", user)
        sessions[user] = UserSession(user, stream, tuple(sorted(by_user.get(user, ()))), nominal_rate_hz, flags)
    return sessions


def write_accel_file(streams: Mapping[str, AccelStream] | Iterable[AccelStream], path, presorted: bool = False) -> None:
    """Write streams user by user; pass ``presorted=True`` to stream from a generator."""
    items = streams.values() if isinstance(streams, Mapping) else streams
    if not presorted:
        items = sorted(items, key=lambda s: s.user_id)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(ACCEL_COLUMNS) + "\n")
        for s in items:
            # shortest round-trip repr; faster and smaller than %.17g
            u = s.user_id
            fh.writelines(f"{u},{t},{x!r},{y!r},{z!r}\n" for t, (x, y, z) in zip(s.timestamps.tolist(), s.xyz.tolist()))


def write_survey_file(surveys: Sequence[SurveyResponse], path) -> None:
    df = pd.DataFrame(
        [(s.user_id, s.timestamp, s.day_slot, s.raw_score) for s in sorted(surveys)],
        columns=list(SURVEY_COLUMNS),
    )
    df.to_csv(path, index=False, lineterminator="\n")
