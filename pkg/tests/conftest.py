import numpy as np
import pytest

from accstress.synth import CohortSpec, cohort_observations, mirrored_archetypes


def small_spec(seed=0, users=3, days=4, **kw):
    return CohortSpec(archetypes=tuple((a, users) for a in mirrored_archetypes()), days=days, seed=seed, **kw)


@pytest.fixture(scope="session")
def small_cohort():
    """Mirrored cohort, 2 x 3 users x 4 days; observations only."""
    return cohort_observations(small_spec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    return path


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
