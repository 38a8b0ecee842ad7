import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "topseg", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("topseg")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# one summary line per acceptance criterion

_CRITERIA: dict[int, tuple[str, str, list]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_", 1)[1]
    num, _, label = name.partition("_")
    key = int(num)
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = "PASS" if report.outcome == "passed" else "FAIL"
        if report.outcome == "skipped":
            outcome = "SKIP"
        _CRITERIA[key] = (label.replace("_", " "), outcome, list(report.user_properties))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        label, outcome, props = _CRITERIA[key]
        notes = "; ".join(f"{k}={v}" for k, v in props)
        terminalreporter.write_line(f"criterion {key:2d} [{outcome}] {label}" + (f" ({notes})" if notes else ""))
