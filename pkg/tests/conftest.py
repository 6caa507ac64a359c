import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ebelab", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ebelab")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_hermitian(rng, shape, m, scale=1.0, traceless=True):
    """Random Hermitian (optionally traceless) matrices of the given batch shape."""
    a = rng.standard_normal(shape + (m, m)) + 1j * rng.standard_normal(shape + (m, m))
    h = 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))
    if traceless:
        h = h - np.trace(h, axis1=-2, axis2=-1)[..., None, None] * np.eye(m) / m
    return scale * h


ACCEPTANCE_LINES = []


def report_criterion(number, title, passed, elapsed, limit, detail):
    """Record one acceptance verdict for the terminal summary."""
    verdict = "PASS" if passed else "FAIL"
    line = f"criterion {number} [{verdict}] {title}: {detail}; {elapsed:.1f} s (limit {limit:g} s)"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
