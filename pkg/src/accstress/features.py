"""Windowing of accelerometer streams and the 34 per-window features.

All spectral features are computed on the magnitude series over the
non-DC components 1..n/2.  Logarithms: base 2 for the two Shannon
entropies, natural log for the differential ``Entropy`` feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .ingest import AccelStream, DEFAULT_RATE_HZ, UserSession

WINDOW_LENGTH = 128
GAP_TOLERANCE_MS = 1000
ENTROPY_BINS = 16

FEATURE_NAMES = (
    "Mean x axis",
    "Mean y axis",
    "Mean z axis",
    "StdDev x axis",
    "StdDev y axis",
    "StdDev z axis",
    "Variance x axis",
    "Variance y axis",
    "Variance z axis",
    "Variance 3 axes",
    "Mean 3 axes",
    "Max 3 axes",
    "Min 3 axes",
    "Standard Deviation 3 axes",
    "Absolute Value 3 axes",
    "Median 3 axes",
    "Range 3 axes",
    "Variance Sum",
    "Magnitude",
    "Signal Magnitude Area",
    "Root Mean Squared",
    "Curve Length",
    "Non Linear Energy",
    "Entropy",
    "Energy",
    "Mean Energy",
    "StdDev Energy",
    "DFT",
    "Peak Magnitude",
    "Peak Magnitude Frequency",
    "Peak Power",
    "Peak Power Frequency",
    "Magnitude Entropy",
    "Power Shannon Entropy",
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

THREE_AXES_SOURCES = ("pooled", "magnitude")


@dataclass(frozen=True, eq=False)
class Window:
    user_id: str
    start_ts: int
    end_ts: int
    xyz: np.ndarray  # (128, 3)


@dataclass(frozen=True, eq=False)
class WindowFeatures:
    user_id: str
    end_ts: int
    values: np.ndarray


@dataclass(eq=False)
class FeatureTable:
    """Feature vectors of many windows, row-aligned."""

    user_ids: np.ndarray
    end_ts: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.end_ts)

    def rows(self):
        for u, t, v in zip(self.user_ids, self.end_ts.tolist(), self.values):
            yield WindowFeatures(str(u), t, v)

    def for_user(self, user_id: str) -> "FeatureTable":
        m = self.user_ids == user_id
        return FeatureTable(self.user_ids[m], self.end_ts[m], self.values[m])

    @classmethod
    def concat(cls, tables: Sequence["FeatureTable"]) -> "FeatureTable":
        if not tables:
            return cls(np.zeros(0, dtype=object), np.zeros(0, dtype=np.int64), np.zeros((0, N_FEATURES)))
        return cls(
            np.concatenate([t.user_ids for t in tables]),
            np.concatenate([t.end_ts for t in tables]),
            np.concatenate([t.values for t in tables]),
        )


def window_slices(timestamps: np.ndarray, length: int = WINDOW_LENGTH, gap_tolerance_ms: int = GAP_TOLERANCE_MS) -> np.ndarray:
    """Start indices of greedy non-overlapping gap-free windows.

    Packing restarts at the first sample after any gap wider than the
    tolerance; a trailing remainder shorter than ``length`` is dropped.
    """
    n = len(timestamps)
    if n < length:
        return np.zeros(0, dtype=np.int64)
    breaks = np.flatnonzero(np.diff(timestamps) > gap_tolerance_ms) + 1
    seg_starts = np.concatenate([[0], breaks])
    seg_ends = np.concatenate([breaks, [n]])
    starts = [np.arange(s, s + ((e - s) // length) * length, length) for s, e in zip(seg_starts, seg_ends)]
    return np.concatenate(starts).astype(np.int64)


def segment_windows(session: UserSession | AccelStream, length: int = WINDOW_LENGTH, gap_tolerance_ms: int = GAP_TOLERANCE_MS) -> list[Window]:
    stream = session.stream if isinstance(session, UserSession) else session
    ts = stream.timestamps
    return [
        Window(stream.user_id, int(ts[s]), int(ts[s + length - 1]), stream.xyz[s : s + length])
        for s in window_slices(ts, length, gap_tolerance_ms)
    ]


def magnitude_series(xyz: np.ndarray) -> np.ndarray:
    """Per-sample Euclidean norm; works on (n, 3) or (w, n, 3)."""
    xyz = np.asarray(xyz.xyz if isinstance(xyz, Window) else xyz, dtype=float)
    return np.sqrt(np.sum(xyz * xyz, axis=-1))


def dft_spectrum(series: np.ndarray) -> np.ndarray:
    """Magnitudes |X_k| of the DFT along the last axis, k = 0 is DC."""
    return np.abs(np.fft.fft(np.asarray(series, dtype=float), axis=-1))


def _mean(v: np.ndarray, axis: int = -1) -> np.ndarray:
    # shift by the first sample so constant inputs reproduce their value exactly
    ref = np.take(v, [0], axis=axis)
    return np.squeeze(ref, axis) + np.mean(v - ref, axis=axis)


def _var(v: np.ndarray, axis: int = -1) -> np.ndarray:
    ref = np.take(v, [0], axis=axis)
    return np.var(v - ref, axis=axis)


def _shannon_bits(weights: np.ndarray) -> np.ndarray:
    total = weights.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(total > 0, weights / np.where(total > 0, total, 1.0), 0.0)
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return np.maximum(terms.sum(axis=-1), 0.0)


def differential_entropy(series: np.ndarray, bins: int = ENTROPY_BINS) -> np.ndarray:
    """Histogram plug-in estimate of -∫ f log f (nats) along the last axis.

    Uses ``bins`` equal-width bins over each series' own range; a constant
    series has entropy 0 by convention.
    """
    m = np.atleast_2d(np.asarray(series, dtype=float))
    n = m.shape[-1]
    lo = m.min(axis=-1, keepdims=True)
    width = (m.max(axis=-1, keepdims=True) - lo) / bins
    safe = np.where(width > 0, width, 1.0)
    idx = np.clip(np.floor((m - lo) / safe).astype(np.int64), 0, bins - 1)
    offsets = np.arange(m.shape[0])[:, None] * bins
    counts = np.bincount((idx + offsets).ravel(), minlength=m.shape[0] * bins).reshape(-1, bins)
    p = counts / n
    with np.errstate(divide="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0) / safe), 0.0)
    h = terms.sum(axis=-1)
    h = np.where(width[:, 0] > 0, h, 0.0)
    return h if np.ndim(series) > 1 else h[0]


def extract_features_batch(xyz: np.ndarray, rate_hz: float = DEFAULT_RATE_HZ, three_axes: str = "pooled") -> np.ndarray:
    """Feature matrix (w, 34) for windows stacked as (w, n, 3)."""
    if three_axes not in THREE_AXES_SOURCES:
        raise ValueError(f"three_axes must be one of {THREE_AXES_SOURCES}")
    xyz = np.asarray(xyz, dtype=float)
    if xyz.ndim != 3 or xyz.shape[-1] != 3:
        raise ValueError(f"expected (windows, samples, 3), got {xyz.shape}")
    w, n, _ = xyz.shape
    out = np.empty((w, N_FEATURES))
    if w == 0:
        return out

    axes = np.moveaxis(xyz, -1, 1)  # (w, 3, n)
    axis_var = _var(axes)
    out[:, 0:3] = _mean(axes)
    out[:, 3:6] = np.sqrt(axis_var)
    out[:, 6:9] = axis_var

    mag = magnitude_series(xyz)
    three = xyz.reshape(w, n * 3) if three_axes == "pooled" else mag
    three_var = _var(three)
    out[:, 9] = three_var
    out[:, 10] = _mean(three)
    out[:, 11] = three.max(axis=-1)
    out[:, 12] = three.min(axis=-1)
    out[:, 13] = np.sqrt(three_var)
    out[:, 14] = np.mean(np.abs(three), axis=-1)
    out[:, 15] = np.median(three, axis=-1)
    out[:, 16] = out[:, 11] - out[:, 12]
    out[:, 17] = axis_var.sum(axis=-1)

    out[:, 18] = _mean(mag)
    out[:, 19] = np.mean(np.abs(xyz).sum(axis=-1), axis=-1)
    out[:, 20] = np.sqrt(np.mean(mag * mag, axis=-1))
    out[:, 21] = np.abs(np.diff(mag, axis=-1)).sum(axis=-1)
    out[:, 22] = np.mean(mag[:, 1:-1] ** 2 - mag[:, :-2] * mag[:, 2:], axis=-1)
    out[:, 23] = differential_entropy(mag)

    # non-DC bins are unaffected by a constant offset; removing mag[0] makes
    # a constant window's spectrum exactly zero
    spec = dft_spectrum(mag - mag[:, :1])[:, 1 : n // 2 + 1]
    power = spec * spec
    out[:, 24] = power.sum(axis=-1)
    out[:, 25] = power.mean(axis=-1)
    out[:, 26] = power.std(axis=-1)
    out[:, 27] = spec.mean(axis=-1)
    bin_hz = rate_hz / n
    out[:, 28] = spec.max(axis=-1)
    out[:, 29] = (np.argmax(spec, axis=-1) + 1) * bin_hz
    out[:, 30] = power.max(axis=-1)
    out[:, 31] = (np.argmax(power, axis=-1) + 1) * bin_hz
    out[:, 32] = _shannon_bits(spec)
    out[:, 33] = _shannon_bits(power)
    return out


def extract_features(window: Window, rate_hz: float = DEFAULT_RATE_HZ, three_axes: str = "pooled") -> WindowFeatures:
    values = extract_features_batch(window.xyz[None], rate_hz, three_axes)[0]
    return WindowFeatures(window.user_id, window.end_ts, values)


def stream_features(
    stream: AccelStream,
    rate_hz: float = DEFAULT_RATE_HZ,
    length: int = WINDOW_LENGTH,
    gap_tolerance_ms: int = GAP_TOLERANCE_MS,
    three_axes: str = "pooled",
    chunk: int = 20_000,
) -> FeatureTable:
    """Segment one user's stream and extract features for every window."""
    starts = window_slices(stream.timestamps, length, gap_tolerance_ms)
    parts = []
    for c in range(0, len(starts), chunk):
        s = starts[c : c + chunk]
        idx = s[:, None] + np.arange(length)
        parts.append(extract_features_batch(stream.xyz[idx], rate_hz, three_axes))
    values = np.concatenate(parts) if parts else np.zeros((0, N_FEATURES))
    end_ts = stream.timestamps[starts + length - 1] if len(starts) else np.zeros(0, dtype=np.int64)
    return FeatureTable(np.full(len(starts), stream.user_id, dtype=object), end_ts.astype(np.int64), values)


FEATURE_FILE_KEYS = ("user_id", "end_ts")


def write_feature_file(table: FeatureTable, path) -> None:
    df = pd.DataFrame(table.values, columns=list(FEATURE_NAMES))
    df.insert(0, "end_ts", table.end_ts)
    df.insert(0, "user_id", table.user_ids)
    df.to_csv(path, index=False, lineterminator="\n", float_format="%.17g")


def read_feature_file(path) -> FeatureTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    df = pd.read_csv(path, dtype={"user_id": str}, keep_default_na=False, float_precision="round_trip")
    expected = [*FEATURE_FILE_KEYS, *FEATURE_NAMES]
    if list(df.columns) != expected:
        raise ValueError(f"{path}: feature file header does not match the expected schema")
    values = df[list(FEATURE_NAMES)].to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{path}: non-finite feature values")
    return FeatureTable(df["user_id"].to_numpy(dtype=object), df["end_ts"].to_numpy(dtype=np.int64), values)
