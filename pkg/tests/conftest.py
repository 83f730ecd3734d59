import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("gel", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("gel")

# property tests backing the invariant suite run at least this many cases
PROPERTY_CASES = 1000


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def binomial_within(count, trials, p, k=3.0):
    """True when count is within k binomial standard deviations of trials * p."""
    sd = np.sqrt(trials * p * (1 - p))
    return abs(count - trials * p) <= k * max(sd, 1e-12)


# criterion number -> one-line verdict, filled in by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
