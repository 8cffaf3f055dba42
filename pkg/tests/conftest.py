import numpy as np
import pytest

from ecgdx.cohort import ECG_FEATURES, CohortTable
from ecgdx.synth import CohortSpec, Signal, TargetSpec

# internal-cohort medians and IQRs, schema order
INTERNAL_SUMMARY = {
    "rr_interval_ms": (769.0, 264.0),
    "pr_interval_ms": (158.0, 38.0),
    "qrs_duration_ms": (94.0, 23.0),
    "qt_interval_ms": (394.0, 68.0),
    "qtc_interval_ms": (447.0, 47.0),
    "p_wave_axis_deg": (51.0, 32.0),
    "qrs_axis_deg": (13.0, 61.0),
    "t_wave_axis_deg": (42.0, 58.0),
}


def make_spec(targets=None, **kw):
    targets = targets or {"A": TargetSpec(0.1)}
    return CohortSpec(dict(INTERNAL_SUMMARY), kw.pop("female_fraction", 0.485), kw.pop("age", (66.0, 25.0)),
                      targets, **kw)


def planted(prevalence, *signals):
    return TargetSpec(prevalence, tuple(Signal(f, d, e) for f, d, e in signals))


def random_cohort(rng, n, p_missing=0.0, targets=("A",), prevalence=0.3):
    X = np.column_stack([rng.normal(size=(n, len(ECG_FEATURES))) * 10 + 100,
                         rng.uniform(18, 90, n), rng.integers(0, 2, n)])
    if p_missing:
        ecg = X[:, :8]
        ecg[rng.random(ecg.shape) < p_missing] = np.nan
    labels = {t: (rng.random(n) < prevalence).astype(np.int8) for t in targets}
    return CohortTable(X, labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ------------------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture
def record():
    """Log one criterion outcome; the line is printed in the terminal summary."""

    def _record(name: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_RESULTS.append((name, bool(passed), detail))
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
