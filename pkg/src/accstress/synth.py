"""Seeded synthetic cohorts of 5 Hz accelerometer streams with surveys.

Each between-survey interval is driven by a latent *activation* measured in
stress-level units: ``activation = level + user_offset + jitter`` for a
rises-with-stress archetype and ``(2 - level) + user_offset + jitter`` for a
falls-with-stress one.  Archetype parameters are given at activation 0, 1
and 2 and interpolated linearly in between, so a user offset shifts every
signal property at once.  The signal is gravity on z, a dominant sinusoid
on x, a 2 Hz tremor on y, AR(1) noise on all axes and Hann-windowed
activity bursts.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .features import FeatureTable, stream_features
from .ingest import AccelStream, SurveyResponse, write_accel_file, write_survey_file
from .observations import Observation, StressLevel, build_observations

GRAVITY = 9.81
DIRECTIONS = ("rises-with-stress", "falls-with-stress", "flat")
TREMOR_HZ = 2.0
AR_COEF = 0.8
BURST_SECONDS = 30.0
BURST_HZ = 1.5
BURST_AMPLITUDE = 1.5
MANIFEST_COLUMNS = ("user_id", "survey_ts", "true_level", "archetype", "day_slot", "raw_score", "activation", "user_offset")


@dataclass(frozen=True)
class ArchetypeSpec:
    """Signal parameters at activation 0, 1 and 2 (Low, Medium, High for a
    rising archetype)."""

    name: str
    direction: str = "rises-with-stress"
    base_amplitude: tuple[float, float, float] = (1.0, 2.5, 4.0)
    tremor_amplitude: tuple[float, float, float] = (0.2, 0.4, 0.6)
    dominant_freq: tuple[float, float, float] = (0.5, 0.8, 1.1)
    burst_rate: tuple[float, float, float] = (1.0, 2.0, 4.0)
    noise_sd: tuple[float, float, float] = (0.05, 0.1, 0.15)

    def validate(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"{self.name}: direction must be one of {DIRECTIONS}")
        for name in ("base_amplitude", "tremor_amplitude", "burst_rate", "noise_sd"):
            vals = getattr(self, name)
            if len(vals) != 3 or min(vals) < 0:
                raise ValueError(f"{self.name}: {name} needs three non-negative values")
        if len(self.dominant_freq) != 3 or not all(0 < f <= 2.5 for f in self.dominant_freq):
            raise ValueError(f"{self.name}: dominant frequencies must lie in (0, 2.5] Hz")
        if self.direction == "flat" and len({*zip(*[getattr(self, n) for n in ("base_amplitude", "tremor_amplitude", "dominant_freq", "burst_rate", "noise_sd")])}) != 1:
            raise ValueError(f"{self.name}: a flat archetype needs identical parameters per level")

    def params(self, activation: float) -> dict[str, float]:
        a = float(activation)
        if self.direction == "flat":
            a = 0.0
        interp = lambda v: v[0] + (v[1] - v[0]) * a if a <= 1 else v[1] + (v[2] - v[1]) * (a - 1)
        return {
            "amplitude": max(0.0, interp(self.base_amplitude)),
            "tremor": max(0.0, interp(self.tremor_amplitude)),
            "freq": float(np.clip(interp(self.dominant_freq), 0.05, 2.5)),
            "burst_rate": max(0.0, interp(self.burst_rate)),
            "noise_sd": max(0.0, interp(self.noise_sd)),
        }

    def activation(self, level: int) -> float:
        if self.direction == "falls-with-stress":
            return 2.0 - level
        if self.direction == "flat":
            return 0.0
        return float(level)


def mirrored_archetypes() -> tuple[ArchetypeSpec, ArchetypeSpec]:
    return ArchetypeSpec("active-when-stressed", "rises-with-stress"), ArchetypeSpec("sedentary-when-stressed", "falls-with-stress")


@dataclass(frozen=True)
class CohortSpec:
    archetypes: tuple[tuple[ArchetypeSpec, int], ...] = tuple((a, 6) for a in mirrored_archetypes())
    days: int = 10
    start_date: str = "2015-03-02"
    slot_minutes: tuple[int, int, int] = (9 * 60, 13 * 60, 17 * 60)
    level_probs: tuple[float, float, float] = (0.4, 0.35, 0.25)
    user_offset_sd: float = 0.45
    jitter_sd: float = 0.2
    rate_hz: float = 5.0
    utc_offset_min: int = 60
    dropout_per_hour: float = 0.0
    dropout_seconds: float = 60.0
    seed: int = 0

    def validate(self) -> None:
        if not self.archetypes:
            raise ValueError("cohort needs at least one archetype")
        for arch, n in self.archetypes:
            arch.validate()
            if n < 1:
                raise ValueError(f"{arch.name}: user count must be >= 1")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if len(self.slot_minutes) != 3 or list(self.slot_minutes) != sorted(set(self.slot_minutes)):
            raise ValueError("need three increasing survey slot times")
        if self.slot_minutes[0] < 0 or self.slot_minutes[2] >= 24 * 60:
            raise ValueError("slot times must fall within the day")
        probs = np.asarray(self.level_probs, dtype=float)
        if len(probs) != 3 or probs.min() < 0 or not np.isclose(probs.sum(), 1.0):
            raise ValueError("level_probs must be three non-negative values summing to 1")
        if min(self.user_offset_sd, self.jitter_sd, self.dropout_per_hour) < 0 or self.dropout_seconds <= 0:
            raise ValueError("noise scales and dropout settings must be non-negative")
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        dt.date.fromisoformat(self.start_date)

    @property
    def n_users(self) -> int:
        return sum(n for _, n in self.archetypes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CohortSpec":
        d = dict(d)
        if "archetypes" in d:
            d["archetypes"] = tuple(
                (ArchetypeSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in a.items()}), int(n))
                for a, n in d["archetypes"]
            )
        for key in ("slot_minutes", "level_probs"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class ManifestRow:
    user_id: str
    survey_ts: int
    true_level: int
    archetype: str
    day_slot: int
    raw_score: int
    activation: float
    user_offset: float


@dataclass
class UserData:
    user_id: str
    archetype: str
    stream: AccelStream
    surveys: list[SurveyResponse]
    manifest: list[ManifestRow]


@dataclass
class SyntheticCohort:
    streams: dict[str, AccelStream]
    surveys: list[SurveyResponse]
    manifest: list[ManifestRow]
    archetype_of: dict[str, str] = field(default_factory=dict)


def _workdays(start: str, n: int) -> list[dt.date]:
    day = dt.date.fromisoformat(start)
    out = []
    while len(out) < n:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def _raw_score(level: int, rng: np.random.Generator) -> int:
    if level == StressLevel.LOW:
        return int(rng.choice([1, 2]))
    if level == StressLevel.MEDIUM:
        return 3
    return int(rng.choice([4, 5]))


def _interval_signal(n: int, t0_s: float, p: dict, rate: float, rng: np.random.Generator) -> np.ndarray:
    t = t0_s + np.arange(n) / rate
    xyz = np.zeros((n, 3))
    xyz[:, 0] = p["amplitude"] * np.sin(2 * np.pi * p["freq"] * t + rng.uniform(0, 2 * np.pi))
    xyz[:, 1] = p["tremor"] * np.sin(2 * np.pi * TREMOR_HZ * t + rng.uniform(0, 2 * np.pi))
    xyz[:, 2] = GRAVITY
    if p["noise_sd"] > 0:
        innov = rng.normal(0.0, p["noise_sd"] * np.sqrt(1 - AR_COEF**2), size=(n, 3))
        xyz += lfilter([1.0], [1.0, -AR_COEF], innov, axis=0)
    n_bursts = rng.poisson(p["burst_rate"] * n / rate / 3600.0)
    length = int(BURST_SECONDS * rate)
    envelope = np.hanning(length) * BURST_AMPLITUDE * np.sin(2 * np.pi * BURST_HZ * np.arange(length) / rate)
    for start in sorted(rng.integers(0, max(n - length, 1), size=n_bursts).tolist()):
        seg = slice(start, min(start + length, n))
        direction = rng.normal(size=2)
        direction /= np.linalg.norm(direction) or 1.0
        xyz[seg, :2] += envelope[: seg.stop - seg.start, None] * direction[None]
    return xyz


def _apply_dropouts(ts: np.ndarray, xyz: np.ndarray, spec: CohortSpec, rng: np.random.Generator):
    if spec.dropout_per_hour <= 0:
        return ts, xyz
    hours = len(ts) / spec.rate_hz / 3600.0
    keep = np.ones(len(ts), dtype=bool)
    gap = int(spec.dropout_seconds * spec.rate_hz)
    for start in rng.integers(0, len(ts), size=rng.poisson(spec.dropout_per_hour * hours)).tolist():
        keep[start : start + gap] = False
    return ts[keep], xyz[keep]


def _generate_user(spec: CohortSpec, user_id: str, arch: ArchetypeSpec, seed_seq: np.random.SeedSequence) -> UserData:
    rng = np.random.default_rng(seed_seq)
    rate = spec.rate_hz
    period_ms = 1000.0 / rate
    offset = rng.normal(0.0, spec.user_offset_sd) if arch.direction != "flat" else 0.0
    ts_parts, xyz_parts, surveys, manifest = [], [], [], []
    for day in _workdays(spec.start_date, spec.days):
        midnight = int(dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc).timestamp() * 1000)
        midnight -= spec.utc_offset_min * 60_000
        levels = rng.choice(3, size=3, p=spec.level_probs)
        slot_ts = [midnight + m * 60_000 for m in spec.slot_minutes]
        for slot, (lvl, ts) in enumerate(zip(levels.tolist(), slot_ts), start=1):
            act = arch.activation(lvl)
            if slot > 1:
                act += offset + rng.normal(0.0, spec.jitter_sd)
                start_ts = slot_ts[slot - 2]
                n = int(round((ts - start_ts) / period_ms))
                t_ms = start_ts + np.round(np.arange(n) * period_ms).astype(np.int64)
                xyz_parts.append(_interval_signal(n, (start_ts - midnight) / 1000.0, arch.params(act), rate, rng))
                ts_parts.append(t_ms)
            score = _raw_score(lvl, rng)
            surveys.append(SurveyResponse(user_id, ts, slot, score))
            manifest.append(ManifestRow(user_id, ts, int(lvl), arch.name, slot, score, float(act), float(offset)))
    ts = np.concatenate(ts_parts) if ts_parts else np.zeros(0, dtype=np.int64)
    xyz = np.concatenate(xyz_parts) if xyz_parts else np.zeros((0, 3))
    ts, xyz = _apply_dropouts(ts, xyz, spec, rng)
    return UserData(user_id, arch.name, AccelStream(user_id, ts, xyz), surveys, manifest)


def iter_users(spec: CohortSpec) -> Iterator[UserData]:
    """Generate users one at a time (bounded memory); deterministic per seed."""
    spec.validate()
    children = np.random.SeedSequence(spec.seed).spawn(spec.n_users)
    i = 0
    for arch, n in spec.archetypes:
        for _ in range(n):
            yield _generate_user(spec, f"u{i + 1:02d}", arch, children[i])
            i += 1


def generate_cohort(spec: CohortSpec) -> SyntheticCohort:
    cohort = SyntheticCohort({}, [], [])
    for u in iter_users(spec):
        cohort.streams[u.user_id] = u.stream
        cohort.surveys.extend(u.surveys)
        cohort.manifest.extend(u.manifest)
        cohort.archetype_of[u.user_id] = u.archetype
    return cohort


@dataclass
class CohortObservations:
    observations: list[Observation]
    manifest: list[ManifestRow]
    archetype_of: dict[str, str]
    n_windows: int
    surveys: list[SurveyResponse]


def cohort_observations(spec: CohortSpec, features: FeatureTable | None = None) -> CohortObservations:
    """Generate, window, extract and aggregate user by user without keeping raw streams."""
    obs, manifest, arch, surveys = [], [], {}, []
    n_windows = 0
    for u in iter_users(spec):
        table = stream_features(u.stream, spec.rate_hz)
        n_windows += len(table)
        obs.extend(build_observations(table, u.surveys))
        manifest.extend(u.manifest)
        surveys.extend(u.surveys)
        arch[u.user_id] = u.archetype
    return CohortObservations(obs, manifest, arch, n_windows, surveys)


class OracleMismatch(ValueError):
    """Observation labels disagree with the generating manifest."""


def oracle_labels(manifest: Sequence[ManifestRow], observations: Sequence[Observation]) -> list[tuple[str, int, int, int]]:
    """Join observations to the manifest: rows of (user, survey_ts, label, true_level)."""
    truth = {(m.user_id, m.survey_ts): m.true_level for m in manifest}
    out = []
    for o in observations:
        if o.key not in truth:
            raise OracleMismatch(f"observation {o.key} has no manifest entry")
        if int(o.label) != truth[o.key]:
            raise OracleMismatch(f"observation {o.key}: label {int(o.label)} but manifest level {truth[o.key]}")
        out.append((o.user_id, o.survey_ts, int(o.label), truth[o.key]))
    return out


def write_manifest(manifest: Sequence[ManifestRow], path) -> None:
    df = pd.DataFrame([asdict(m) for m in manifest], columns=list(MANIFEST_COLUMNS))
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def read_manifest(path) -> list[ManifestRow]:
    df = pd.read_csv(path, dtype={"user_id": str, "archetype": str}, float_precision="round_trip")
    if list(df.columns) != list(MANIFEST_COLUMNS):
        raise ValueError(f"{path}: manifest header does not match the expected schema")
    return [
        ManifestRow(r.user_id, int(r.survey_ts), int(r.true_level), r.archetype, int(r.day_slot), int(r.raw_score), float(r.activation), float(r.user_offset))
        for r in df.itertuples(index=False)
    ]


def write_cohort(spec: CohortSpec, out_dir) -> dict[str, Path]:
    """Write accel.csv, surveys.csv and manifest.csv, one user at a time."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"accel": out / "accel.csv", "surveys": out / "surveys.csv", "manifest": out / "manifest.csv"}
    surveys, manifest = [], []

    def streams():
        for u in iter_users(spec):
            surveys.extend(u.surveys)
            manifest.extend(u.manifest)
            yield u.stream

    write_accel_file(streams(), paths["accel"], presorted=True)
    write_survey_file(surveys, paths["surveys"])
    write_manifest(manifest, paths["manifest"])
    return paths
