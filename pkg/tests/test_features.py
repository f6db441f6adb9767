import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from accstress.features import (
    FEATURE_INDEX as FI,
    FEATURE_NAMES,
    N_FEATURES,
    Window,
    differential_entropy,
    dft_spectrum,
    extract_features,
    extract_features_batch,
    magnitude_series,
    read_feature_file,
    segment_windows,
    stream_features,
    window_slices,
    write_feature_file,
)
from accstress.ingest import AccelStream


def naive_dft_mag(x):
    n = len(x)
    k = np.arange(n)
    return np.abs(np.exp(-2j * np.pi * np.outer(k, k) / n) @ x)


def naive_features(xyz, rate=5.0):
    """Loop-based recomputation of the whole feature vector."""
    n = len(xyz)
    x, y, z = xyz.T
    mag = [math.sqrt(a * a + b * b + c * c) for a, b, c in xyz]
    pooled = list(x) + list(y) + list(z)
    spec = naive_dft_mag(np.array(mag))[1 : n // 2 + 1]
    power = spec**2

    def shannon(w):
        p = w / w.sum()
        return -sum(v * math.log2(v) for v in p if v > 0)

    out = [np.mean(x), np.mean(y), np.mean(z), np.std(x), np.std(y), np.std(z), np.var(x), np.var(y), np.var(z)]
    out += [np.var(pooled), np.mean(pooled), max(pooled), min(pooled), np.std(pooled), np.mean(np.abs(pooled)),
            np.median(pooled), max(pooled) - min(pooled), np.var(x) + np.var(y) + np.var(z)]
    out += [np.mean(mag), np.mean(np.abs(x) + np.abs(y) + np.abs(z)), math.sqrt(np.mean(np.square(mag))),
            sum(abs(mag[i] - mag[i - 1]) for i in range(1, n)),
            np.mean([mag[i] ** 2 - mag[i - 1] * mag[i + 1] for i in range(1, n - 1)])]
    lo, hi = min(mag), max(mag)
    width = (hi - lo) / 16
    counts = [0] * 16
    for v in mag:
        counts[min(int((v - lo) / width), 15)] += 1
    out.append(-sum(c / n * math.log(c / n / width) for c in counts if c))
    out += [power.sum(), power.mean(), power.std(), spec.mean(), spec.max(), (np.argmax(spec) + 1) * rate / n,
            power.max(), (np.argmax(power) + 1) * rate / n, shannon(spec), shannon(power)]
    return np.array(out)


def test_feature_name_list():
    assert N_FEATURES == 34 and len(set(FEATURE_NAMES)) == 34
    assert FEATURE_NAMES[0] == "Mean x axis" and FEATURE_NAMES[-1] == "Power Shannon Entropy"


def test_dft_examples():
    assert np.allclose(dft_spectrum([1.0, 0, 0, 0]), [1, 1, 1, 1])
    c = dft_spectrum(np.full(16, -2.5))
    assert c[0] == pytest.approx(40) and np.allclose(c[1:], 0, atol=1e-12)
    t = np.arange(128)
    s = dft_spectrum(np.cos(2 * np.pi * 3 * t / 128))
    assert set(np.argsort(s)[-2:]) == {3, 125}
    assert s[3] == pytest.approx(64, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 64), elements=st.floats(-1e3, 1e3)))
def test_dft_matches_naive_and_parseval(x):
    got = dft_spectrum(x)
    ref = naive_dft_mag(x)
    scale = max(np.abs(ref).max(), 1e-300)
    assert np.all(np.abs(got - ref) <= 1e-9 * scale + 1e-12)
    energy = np.sum(x * x)
    assert np.sum(got**2) / len(x) == pytest.approx(energy, rel=1e-9, abs=1e-12)


def test_magnitude_examples():
    assert np.all(magnitude_series(np.tile([3.0, 4.0, 0.0], (5, 1))) == 5)
    assert np.all(magnitude_series(np.zeros((4, 3))) == 0)
    assert magnitude_series(np.array([[1.0, 2.0, 2.0]]))[0] == 3


def test_window_segmentation_examples():
    t = np.arange(300) * 200
    assert window_slices(t).tolist() == [0, 128]
    t = np.arange(256) * 200
    s = AccelStream("u", t, np.zeros((256, 3)))
    w = segment_windows(s)
    assert [(x.start_ts, x.end_ts) for x in w] == [(0, 127 * 200), (128 * 200, 255 * 200)]
    gap = np.arange(128) * 200
    gap[64:] += 10_000
    assert len(window_slices(gap)) == 0


def test_window_packing_restarts_after_gap():
    t = np.concatenate([np.arange(100), 1000 + np.arange(300)]) * 200
    starts = window_slices(t)
    assert starts.tolist() == [100, 228]
    for s in starts:
        assert np.diff(t[s : s + 128]).max() <= 1000


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 3000), min_size=1, max_size=600))
def test_windows_never_span_gaps(deltas):
    t = np.cumsum([0] + deltas)
    starts = window_slices(t)
    assert np.all(np.diff(starts) >= 128)
    for s in starts:
        assert np.diff(t[s : s + 128]).max() <= 1000


def test_constant_window_closed_form():
    w = Window("u", 0, 1, np.tile([0.0, 0.0, 9.81], (128, 1)))
    f = extract_features(w).values
    assert f[FI["Magnitude"]] == 9.81
    assert f[FI["Curve Length"]] == 0 and f[FI["Energy"]] == 0
    for name in FEATURE_NAMES:
        if name.endswith(" axis") and ("StdDev" in name or "Variance" in name):
            assert f[FI[name]] == 0, name
    assert f[FI["Variance Sum"]] == 0
    assert f[FI["Range 3 axes"]] == 9.81
    assert f[FI["Entropy"]] == 0
    assert np.all(np.isfinite(f))


def test_cosine_peak_frequency():
    t = np.arange(128)
    mag = 10 + np.cos(2 * np.pi * 3 * t / 128)
    xyz = np.column_stack([np.zeros(128), np.zeros(128), mag])
    f = extract_features_batch(xyz[None])[0]
    assert f[FI["Peak Magnitude Frequency"]] == pytest.approx(3 * 5 / 128)
    assert f[FI["Peak Power Frequency"]] == pytest.approx(3 * 5 / 128)
    assert f[FI["Peak Magnitude"]] == pytest.approx(64)


def test_uniform_spectrum_entropy_is_six_bits():
    # an impulse has a flat non-DC spectrum
    mag = np.full(128, 5.0)
    mag[0] += 1.0
    xyz = np.column_stack([np.zeros(128), np.zeros(128), mag])
    f = extract_features_batch(xyz[None])[0]
    assert f[FI["Magnitude Entropy"]] == pytest.approx(6.0, abs=1e-12)
    assert f[FI["Power Shannon Entropy"]] == pytest.approx(6.0, abs=1e-12)


def test_batch_matches_loop_oracle(rng):
    for _ in range(20):
        xyz = rng.normal(0, rng.uniform(0.1, 3), size=(128, 3)) + [0, 0, 9.81]
        got = extract_features(Window("u", 0, 1, xyz)).values
        np.testing.assert_allclose(got, naive_features(xyz), rtol=1e-9, atol=1e-9)


def test_differential_entropy_of_uniform_sample():
    # evenly spread values: every bin gets n/16, h = log(range)
    v = np.linspace(0, 8, 1600)
    assert differential_entropy(v) == pytest.approx(math.log(8), abs=1e-3)


windows = arrays(np.float64, (128, 3), elements=st.floats(-40, 40, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(windows)
def test_feature_invariants(xyz):
    f = extract_features_batch(xyz[None])[0]
    assert np.all(np.isfinite(f))
    nonneg = [n for n in FEATURE_NAMES if "StdDev" in n or "Variance" in n or "Range" in n or "Energy" == n]
    nonneg += ["Standard Deviation 3 axes", "Magnitude Entropy", "Power Shannon Entropy", "Mean Energy", "Curve Length"]
    for n in nonneg:
        assert f[FI[n]] >= 0, n
    assert f[FI["Max 3 axes"]] >= f[FI["Median 3 axes"]] >= f[FI["Min 3 axes"]]
    assert f[FI["Magnitude Entropy"]] <= 6 + 1e-12 and f[FI["Power Shannon Entropy"]] <= 6 + 1e-12


@settings(max_examples=40, deadline=None)
@given(windows, st.floats(-20, 20), st.floats(0.1, 10))
def test_translation_and_scale_covariance(xyz, c, s):
    base = extract_features_batch(xyz[None])[0]
    moved = extract_features_batch((xyz + c)[None])[0]
    tol = 1e-6 * (1 + np.abs(xyz).max() + abs(c)) ** 2
    for n in ("Variance x axis", "StdDev y axis", "Variance 3 axes", "Range 3 axes", "Variance Sum"):
        assert moved[FI[n]] == pytest.approx(base[FI[n]], abs=tol)
    scaled = extract_features_batch((xyz * s)[None])[0]
    for n in ("Magnitude", "Root Mean Squared", "Signal Magnitude Area", "Curve Length"):
        assert scaled[FI[n]] == pytest.approx(s * base[FI[n]], rel=1e-9, abs=1e-9)
    for n in ("Variance x axis", "Variance 3 axes", "Variance Sum"):
        assert scaled[FI[n]] == pytest.approx(s * s * base[FI[n]], rel=1e-9, abs=1e-9)


def test_pure_and_batch_consistent(rng):
    xyz = rng.normal(size=(5, 128, 3))
    batch = extract_features_batch(xyz)
    for i in range(5):
        single = extract_features(Window("u", 0, 1, xyz[i])).values
        assert np.array_equal(single, batch[i])
    assert np.array_equal(extract_features_batch(xyz), batch)


def test_magnitude_three_axes_switch(rng):
    xyz = rng.normal(size=(128, 3))
    f = extract_features_batch(xyz[None], three_axes="magnitude")[0]
    mag = magnitude_series(xyz)
    assert f[FI["Max 3 axes"]] == mag.max()
    assert f[FI["Median 3 axes"]] == np.median(mag)
    with pytest.raises(ValueError):
        extract_features_batch(xyz[None], three_axes="bogus")


def test_feature_file_round_trip(tmp_path, rng):
    t = np.arange(1000) * 200
    table = stream_features(AccelStream("u1", t, rng.normal(size=(1000, 3))))
    assert len(table) == 7
    write_feature_file(table, tmp_path / "f.csv")
    back = read_feature_file(tmp_path / "f.csv")
    assert np.array_equal(back.values, table.values)
    assert back.end_ts.tolist() == table.end_ts.tolist()
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header == ["user_id", "end_ts", *FEATURE_NAMES]


def test_empty_stream_gives_no_windows():
    table = stream_features(AccelStream.empty("u"))
    assert len(table) == 0 and table.values.shape == (0, 34)
