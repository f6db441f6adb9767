import dataclasses
import filecmp

import numpy as np
import pytest

from accstress.features import FEATURE_NAMES, stream_features
from accstress.observations import AGGREGATE_NAMES, OBSERVED_SLOTS, feature_matrix
from accstress.similarity import behavior_vector
from accstress.synth import (
    ArchetypeSpec,
    CohortSpec,
    OracleMismatch,
    cohort_observations,
    generate_cohort,
    iter_users,
    oracle_labels,
    read_manifest,
    write_cohort,
    write_manifest,
)

from conftest import small_spec

FLAT_QUIET = ArchetypeSpec(
    "still",
    "flat",
    base_amplitude=(0, 0, 0),
    tremor_amplitude=(0, 0, 0),
    dominant_freq=(1, 1, 1),
    burst_rate=(0, 0, 0),
    noise_sd=(0, 0, 0),
)


def test_flat_noiseless_stream_is_constant():
    spec = CohortSpec(archetypes=((FLAT_QUIET, 1),), days=1, level_probs=(1, 0, 0))
    u = next(iter_users(spec))
    mag = np.linalg.norm(u.stream.xyz, axis=1)
    assert np.allclose(mag, 9.81, rtol=0, atol=1e-12)
    table = stream_features(u.stream, 5.0)
    assert len(table.end_ts) > 0
    for name in ("StdDev x axis", "StdDev y axis", "StdDev z axis"):
        assert np.allclose(table.values[:, FEATURE_NAMES.index(name)], 0, atol=1e-9)
    assert np.allclose(table.values[:, FEATURE_NAMES.index("Magnitude")], 9.81, atol=1e-12)


def test_spacing_exactly_200ms():
    for u in iter_users(small_spec(users=1, days=3)):
        d = np.diff(u.stream.timestamps)
        # contiguous within a workday; the only other steps are overnight
        assert np.all((d == 200) | (d > 12 * 3600_000))
        assert np.sum(d != 200) == 2


def test_no_gaps_within_interval():
    u = next(iter_users(small_spec(users=1, days=1)))
    ts = np.asarray(u.stream.timestamps)
    # slot 1 -> slot 3 is one contiguous 8 h stretch
    assert np.all(np.diff(ts) == 200)
    assert ts[0] == u.surveys[0].timestamp


def test_dropouts_make_gaps():
    u = next(iter_users(small_spec(users=1, days=1, dropout_per_hour=2.0)))
    assert np.any(np.diff(u.stream.timestamps) > 1000)


def test_rises_archetype_magnitude_separation():
    spec = CohortSpec(archetypes=((ArchetypeSpec("up"), 3),), days=10, seed=3)
    mi = FEATURE_NAMES.index("Magnitude")
    for u in iter_users(spec):
        table = stream_features(u.stream, 5.0)
        level = np.full(len(table.end_ts), -1)
        for m in u.manifest:
            if m.day_slot in OBSERVED_SLOTS:
                inside = (table.end_ts > m.survey_ts - 4 * 3600_000) & (table.end_ts <= m.survey_ts)
                level[inside] = m.true_level
        lo, hi = table.values[level == 0, mi], table.values[level == 2, mi]
        if len(lo) < 2 or len(hi) < 2:
            continue
        pooled = np.sqrt((lo.var(ddof=1) + hi.var(ddof=1)) / 2)
        assert np.median(hi) - np.median(lo) >= 3 * pooled


def test_mirrored_archetypes_have_opposite_low_high_signs():
    co = cohort_observations(small_spec(users=3, days=10, seed=1))
    mag_mean = AGGREGATE_NAMES.index("mean_Magnitude")
    signs = {}
    for user in sorted(co.archetype_of):
        X, y = feature_matrix([o for o in co.observations if o.user_id == user])
        b = behavior_vector(user, X, y)
        if b.mask[1]:  # (Low, High) block
            signs.setdefault(co.archetype_of[user], []).append(np.sign(b.columns([1])[mag_mean]))
    assert signs["active-when-stressed"] and all(s < 0 for s in signs["active-when-stressed"])
    assert signs["sedentary-when-stressed"] and all(s > 0 for s in signs["sedentary-when-stressed"])


def test_oracle_labels_and_accounting(small_cohort):
    rows = oracle_labels(small_cohort.manifest, small_cohort.observations)
    assert all(label == truth for _, _, label, truth in rows)
    observed = [m for m in small_cohort.manifest if m.day_slot in OBSERVED_SLOTS]
    assert len(rows) == len(observed) == len(small_cohort.observations)


def test_oracle_accounting_with_dropouts():
    spec = small_spec(users=2, days=3, dropout_per_hour=20.0, dropout_seconds=600.0)
    co = cohort_observations(spec)
    observed = [m for m in co.manifest if m.day_slot in OBSERVED_SLOTS]
    assert len(oracle_labels(co.manifest, co.observations)) == len(co.observations) <= len(observed)


def test_tampered_manifest_raises(small_cohort):
    m = list(small_cohort.manifest)
    i = next(i for i, r in enumerate(m) if r.day_slot == 2)
    m[i] = dataclasses.replace(m[i], true_level=(m[i].true_level + 1) % 3)
    with pytest.raises(OracleMismatch):
        oracle_labels(m, small_cohort.observations)
    with pytest.raises(OracleMismatch):
        oracle_labels([r for j, r in enumerate(small_cohort.manifest) if j != i], small_cohort.observations)


def test_same_seed_bit_identical_files(tmp_path):
    spec = small_spec(users=1, days=2, seed=9)
    a = write_cohort(spec, tmp_path / "a")
    b = write_cohort(spec, tmp_path / "b")
    for key in a:
        assert filecmp.cmp(a[key], b[key], shallow=False)
    c = write_cohort(dataclasses.replace(spec, seed=10), tmp_path / "c")
    assert not filecmp.cmp(a["accel"], c["accel"], shallow=False)


def test_manifest_round_trip(tmp_path):
    cohort = generate_cohort(small_spec(users=1, days=2))
    write_manifest(cohort.manifest, tmp_path / "m.csv")
    assert read_manifest(tmp_path / "m.csv") == cohort.manifest


def test_spec_dict_round_trip():
    spec = small_spec(seed=4)
    assert CohortSpec.from_dict(spec.to_dict()) == spec


@pytest.mark.parametrize(
    "bad",
    [
        dict(days=0),
        dict(level_probs=(0.5, 0.5, 0.5)),
        dict(slot_minutes=(600, 540, 900)),
        dict(rate_hz=0),
        dict(archetypes=((ArchetypeSpec("x", base_amplitude=(-1, 0, 1)), 1),)),
        dict(archetypes=((ArchetypeSpec("x", dominant_freq=(0.5, 1.0, 3.0)), 1),)),
        dict(archetypes=((ArchetypeSpec("x", direction="sideways"), 1),)),
        dict(archetypes=((ArchetypeSpec("x"), 0),)),
    ],
)
def test_invalid_spec_rejected_before_generation(bad):
    spec = dataclasses.replace(CohortSpec(), **bad)
    with pytest.raises(ValueError):
        next(iter_users(spec))


def test_observations_use_only_later_slots(small_cohort):
    slots = {(m.user_id, m.survey_ts): m.day_slot for m in small_cohort.manifest}
    assert {slots[o.key] for o in small_cohort.observations} <= set(OBSERVED_SLOTS)
